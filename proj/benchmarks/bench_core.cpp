#include <benchmark/benchmark.h>

#include "netfact/qp.hpp"
#include "netfact/random.hpp"
#include "netfact/synthetic.hpp"
#include "netfact/trainer.hpp"

using namespace netfact;

namespace {

struct Setup {
    CohortDataset data;
    FactorModel model;
    AugmentedState aug;
    HyperParams hp;
};

Setup make_setup(int m, int n, int k) {
    GeneratorConfig gen;
    gen.M = m;
    gen.N = n;
    gen.K_true = k;
    gen.rng_seed = 1;
    Setup s;
    GroundTruth truth;
    generate_cohort(gen, s.data, truth);
    s.hp.K = k;
    initialize(s.data, s.hp, 3, s.model, s.aug);
    return s;
}

QpProblem make_qp(int k) {
    Rng rng = make_rng(derive_seed(11u, "bench-qp", k));
    Matrix a(k, k);
    for (int j = 0; j < k; ++j)
        for (int i = 0; i < k; ++i) a(i, j) = draw_normal(rng, 1.0);
    QpProblem prob;
    prob.H = a.transpose() * a + 0.1 * Matrix::Identity(k, k);
    prob.f.resize(k);
    for (int i = 0; i < k; ++i) prob.f(i) = draw_normal(rng, 2.0);
    return prob;
}

void BM_grad_B(benchmark::State& state) {
    const Setup s = make_setup(50, 100, 4);
    for (auto _ : state) benchmark::DoNotOptimize(grad_B(s.data, s.model, s.aug));
}
BENCHMARK(BM_grad_B);

void BM_step2_update_C(benchmark::State& state) {
    const Setup s = make_setup(50, 100, 4);
    for (auto _ : state)
        benchmark::DoNotOptimize(step2_update_C(s.data, s.model, s.aug, s.hp));
}
BENCHMARK(BM_step2_update_C);

void BM_step4_update_D(benchmark::State& state) {
    const Setup s = make_setup(50, 100, 4);
    for (auto _ : state)
        benchmark::DoNotOptimize(step4_update_D(s.data, s.model, s.aug));
}
BENCHMARK(BM_step4_update_D);

void BM_solve_nonneg_qp(benchmark::State& state) {
    const QpProblem prob = make_qp(static_cast<int>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(solve_nonneg_qp(prob));
}
BENCHMARK(BM_solve_nonneg_qp)->Arg(4)->Arg(8)->Arg(16);

void BM_prediction_qp(benchmark::State& state) {
    const Setup s = make_setup(50, 1, 8);
    for (auto _ : state) {
        const QpProblem prob =
            build_prediction_qp(s.model.B, s.data.gammas[0], s.hp.lambda2);
        benchmark::DoNotOptimize(solve_nonneg_qp(prob));
    }
}
BENCHMARK(BM_prediction_qp);

void BM_fit_outer_iteration(benchmark::State& state) {
    const Setup s = make_setup(30, 40, 4);
    TrainerConfig cfg;
    cfg.hp = s.hp;
    cfg.hp.max_outer_iters = 1;
    for (auto _ : state) benchmark::DoNotOptimize(fit(s.data, cfg));
}
BENCHMARK(BM_fit_outer_iteration);

void BM_generate_cohort(benchmark::State& state) {
    GeneratorConfig gen;
    gen.M = 50;
    gen.N = 100;
    gen.K_true = 4;
    gen.rng_seed = 1;
    for (auto _ : state) {
        CohortDataset data;
        GroundTruth truth;
        generate_cohort(gen, data, truth);
        benchmark::DoNotOptimize(data);
    }
}
BENCHMARK(BM_generate_cohort);

}  // namespace

BENCHMARK_MAIN();
