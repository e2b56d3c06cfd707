// Benchmark the OpenMP kernels against the serial reference and check
// bit-identical output.

#include <chrono>
#include <cstdio>
#include <random>

#include "mspk/kernels.hpp"
#include "mspk/tensor.hpp"

using namespace mspk;

namespace {

double now_s() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch())
      .count();
}

Tensor random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  Tensor t(r, c);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  for (double& v : t.data) v = d(rng);
  return t;
}

bool identical(const Tensor& a, const Tensor& b) {
  return a.data == b.data;
}

}  // namespace

int main() {
  std::mt19937_64 rng(7);
  std::printf("%-28s %10s %10s %8s  %s\n", "kernel", "serial(s)", "openmp(s)",
              "speedup", "identical");

  for (std::size_t n : {128, 256, 512, 1024}) {
    const Tensor a = random_tensor(n, n, rng);
    const Tensor b = random_tensor(n, n, rng);
    Tensor cs(n, n), cp(n, n);
    const int reps = n <= 256 ? 20 : 5;

    double t0 = now_s();
    for (int r = 0; r < reps; ++r)
      kernels::serial::gemm(a, false, b, false, cs, false);
    const double serial = (now_s() - t0) / reps;

    kernels::set_parallel(true);
    t0 = now_s();
    for (int r = 0; r < reps; ++r) kernels::gemm(a, false, b, false, cp);
    const double par = (now_s() - t0) / reps;

    char label[64];
    std::snprintf(label, sizeof(label), "gemm %zux%zux%zu", n, n, n);
    std::printf("%-28s %10.4f %10.4f %7.2fx  %s\n", label, serial, par,
                serial / par, identical(cs, cp) ? "yes" : "NO");
  }

  for (std::size_t n : {256, 1024, 4096}) {
    const std::size_t d = 128;
    const Tensor e = random_tensor(n, d, rng);
    Tensor as(n, n), ap(n, n);
    const int reps = n <= 1024 ? 10 : 3;

    double t0 = now_s();
    for (int r = 0; r < reps; ++r)
      kernels::serial::cosine_affinity_matrix(e, as);
    const double serial = (now_s() - t0) / reps;

    kernels::set_parallel(true);
    t0 = now_s();
    for (int r = 0; r < reps; ++r) kernels::cosine_affinity_matrix(e, ap);
    const double par = (now_s() - t0) / reps;

    char label[64];
    std::snprintf(label, sizeof(label), "cosine-affinity %zux%zu", n, d);
    std::printf("%-28s %10.4f %10.4f %7.2fx  %s\n", label, serial, par,
                serial / par, identical(as, ap) ? "yes" : "NO");
  }
  return 0;
}
