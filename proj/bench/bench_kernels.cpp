// Times the OpenMP gemm kernels against the serial reference and compares
// end-to-end evaluation throughput single- vs multi-threaded.

#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "mipl/data.hpp"
#include "mipl/evalsuite.hpp"
#include "mipl/kernels.hpp"
#include "mipl/model.hpp"
#include "mipl/rng.hpp"

namespace {

double seconds(const std::function<void()>& fn, int reps) {
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(t1 - t0).count() / reps;
}

void bench_gemm(int m, int k, int n, int reps) {
    mipl::rng::Engine eng(7);
    std::vector<double> a(static_cast<std::size_t>(m) * k);
    std::vector<double> b(static_cast<std::size_t>(k) * n);
    std::vector<double> c(static_cast<std::size_t>(m) * n);
    for (double& v : a) v = eng.uniform(-1.0, 1.0);
    for (double& v : b) v = eng.uniform(-1.0, 1.0);

    const double t_ref = seconds(
        [&] { mipl::kernels::gemm_nn_ref(a.data(), b.data(), c.data(), m, k, n, false); },
        reps);
    mipl::kernels::set_exec(mipl::kernels::Exec::parallel);
    const double t_par = seconds(
        [&] { mipl::kernels::gemm_nn(a.data(), b.data(), c.data(), m, k, n, false); },
        reps);
    const double flops = 2.0 * m * k * n;
    std::printf("gemm %4dx%4dx%4d  serial %8.3f ms (%7.2f MFLOP/s)  openmp %8.3f ms (%7.2f MFLOP/s)  speedup %.2fx\n",
                m, k, n, t_ref * 1e3, flops / t_ref / 1e6, t_par * 1e3,
                flops / t_par / 1e6, t_ref / t_par);
}

void bench_eval() {
    mipl::data::GenConfig gen;
    gen.m = 400;
    gen.k = 5;
    gen.d = 10;
    gen.n_min = 5;
    gen.n_max = 15;
    gen.r = 1;
    gen.seed = 11;
    const mipl::data::Dataset ds = mipl::data::generate(gen);

    mipl::model::ModelConfig mc;
    mc.embed_dim = 32;
    mc.attn_dim = 16;
    mc.hidden = {32};
    mipl::rng::Engine eng(11);
    const mipl::model::ModelParams params =
        mipl::model::ModelParams::init(mc, gen.d, gen.k, eng);

#ifdef _OPENMP
    const int max_threads = omp_get_max_threads();
    omp_set_num_threads(1);
#endif
    const double t1 = seconds(
        [&] { mipl::evalsuite::evaluate(params, ds, 0.1); }, 3);
#ifdef _OPENMP
    omp_set_num_threads(max_threads);
#endif
    const double tn = seconds(
        [&] { mipl::evalsuite::evaluate(params, ds, 0.1); }, 3);
    std::printf("evaluate %d bags           1 thread %8.3f ms              n threads %8.3f ms              speedup %.2fx\n",
                ds.size(), t1 * 1e3, tn * 1e3, t1 / tn);
}

} // namespace

int main() {
    std::printf("kernel and evaluation throughput, serial reference vs OpenMP\n");
    bench_gemm(64, 64, 64, 50);
    bench_gemm(128, 128, 128, 20);
    bench_gemm(256, 256, 256, 5);
    bench_gemm(512, 512, 512, 2);
    bench_eval();
    return 0;
}
