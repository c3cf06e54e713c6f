// SPDX-License-Identifier: Apache-2.0
//
// Microbenchmarks for the hot paths: codebook gain sweeps, model forward and
// forward+backward passes, per-slot refinement and the budgeted searches.

#include <benchmark/benchmark.h>

#include <memory>

#include "nfbeam/codebook.hpp"
#include "nfbeam/evalharness.hpp"
#include "nfbeam/inference.hpp"
#include "nfbeam/training.hpp"

namespace {

using namespace nfbeam;

struct Fixture {
  SystemConfig sys;
  PolarCodebook cb;
  Dataset ds;
  BeamPredictor model;
  ModelInputs inputs;
  ChannelSnapshot snap;

  static Fixture make() {
    SystemConfig sys;
    CodebookLayout lay;
    PolarCodebook cb = build_codebook(sys, lay);
    DatasetConfig dcfg;
    dcfg.n_episodes = 4;
    dcfg.n_scenes = 2;
    dcfg.seed = 99;
    Dataset ds = make_dataset(sys, cb, dcfg);
    ModelConfig mc;
    BeamPredictor model(mc, 99);
    ModelInputs inputs = make_model_inputs(ds, 0, mc);
    ChannelSnapshot snap = ds.episodes[0].horizon[0].snapshot;
    return Fixture{sys, std::move(cb), std::move(ds), std::move(model),
                   std::move(inputs), std::move(snap)};
  }

  static Fixture& get() {
    static Fixture f = make();
    return f;
  }
};

void BM_GainSweep(benchmark::State& state) {
  Fixture& f = Fixture::get();
  for (auto _ : state) {
    benchmark::DoNotOptimize(f.cb.gain_sweep(f.snap.h).sum());
  }
}
BENCHMARK(BM_GainSweep);

void BM_OracleLabel(benchmark::State& state) {
  Fixture& f = Fixture::get();
  for (auto _ : state) {
    benchmark::DoNotOptimize(oracle_optimal(f.cb, f.snap).global_index);
  }
}
BENCHMARK(BM_OracleLabel);

void BM_ModelForward(benchmark::State& state) {
  Fixture& f = Fixture::get();
  for (auto _ : state) {
    benchmark::DoNotOptimize(f.model.predict(f.inputs).trajectory.sum());
  }
}
BENCHMARK(BM_ModelForward);

void BM_ModelForwardBackward(benchmark::State& state) {
  Fixture& f = Fixture::get();
  const Episode& ep = f.ds.episodes[0];
  const EpisodeTargets targets =
      make_episode_targets(ep, f.model.config(), LossConfig{});
  for (auto _ : state) {
    ad::Tape tape;
    ForwardGraph fg = f.model.forward(tape, f.inputs);
    LossBreakdown loss =
        build_episode_loss(tape, fg, targets, ep, f.cb, LossConfig{});
    tape.backward(loss.total);
    benchmark::DoNotOptimize(tape.value(loss.total)(0, 0));
  }
}
BENCHMARK(BM_ModelForwardBackward);

void BM_RefineSlot(benchmark::State& state) {
  Fixture& f = Fixture::get();
  const PredictionBundle bundle = f.model.predict(f.inputs);
  RefinementConfig rc;
  rc.mode = RefinementConfig::Mode::kPilotSweep;
  RandomStream noise(1, StreamKind::kPilotNoise, 0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        refine_slot(bundle, 0, f.snap, f.cb, f.sys, rc, noise).pilots_used);
  }
}
BENCHMARK(BM_RefineSlot);

void BM_HierarchicalSearch(benchmark::State& state) {
  Fixture& f = Fixture::get();
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        hierarchical_search(f.snap, f.cb, 90, f.sys, nullptr).pilots_used);
  }
}
BENCHMARK(BM_HierarchicalSearch);

void BM_TwoStageSearch(benchmark::State& state) {
  Fixture& f = Fixture::get();
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        two_stage_search(f.snap, f.cb, 90, f.sys, nullptr).pilots_used);
  }
}
BENCHMARK(BM_TwoStageSearch);

}  // namespace

BENCHMARK_MAIN();
