// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "nfbeam/channel.hpp"
#include "nfbeam/codebook.hpp"

using namespace nfbeam;

namespace {

SystemConfig bench_system(int rows = 8, int cols = 6) {
  SystemConfig cfg;
  cfg.antenna_rows = rows;
  cfg.antenna_cols = cols;
  return cfg;
}

CodebookLayout bench_layout() {
  CodebookLayout layout;
  layout.n_azimuth = 6;
  layout.n_elevation = 5;
  layout.n_distance = 4;
  // Small test panels have sub-meter Rayleigh distances, so pin the ring
  // ceiling instead of deriving it from the aperture.
  layout.r_max_m = 8.0;
  return layout;
}

ChannelSnapshot los_snapshot_at(const Vec3& p, const SystemConfig& cfg) {
  const ArrayGeometry geom = antenna_positions(cfg);
  return synthesize_channel(trace_paths(SceneConfig{}, p, geom, cfg), cfg);
}

std::string temp_path(const char* name) {
  return std::string("./") + name;
}

}  // namespace

TEST_CASE("triplet/global mapping follows the documented scan order") {
  const CodebookLayout dflt{};  // 20 x 20 x 10
  CHECK(triplet_to_global({2, 1, 1}, dflt) == 201);
  CHECK(triplet_to_global({1, 1, 1}, dflt) == 1);
  CHECK(triplet_to_global({20, 20, 10}, dflt) == 4000);
  CHECK(triplet_to_global({1, 2, 1}, dflt) == 11);
  CHECK(triplet_to_global({1, 1, 2}, dflt) == 2);

  // Independent oracle: enumerate the nested scan loops and count.
  const CodebookLayout small = bench_layout();
  int k = 0;
  for (int i = 1; i <= small.n_azimuth; ++i)
    for (int j = 1; j <= small.n_elevation; ++j)
      for (int q = 1; q <= small.n_distance; ++q) {
        ++k;
        CHECK(triplet_to_global({i, j, q}, small) == k);
        CHECK(global_to_triplet(k, small) == BeamTriplet{i, j, q});
      }
  CHECK(k == small.size());

  CHECK_THROWS_AS(triplet_to_global({0, 1, 1}, dflt), InvalidArgument);
  CHECK_THROWS_AS(triplet_to_global({1, 21, 1}, dflt), InvalidArgument);
  CHECK_THROWS_AS(triplet_to_global({1, 1, 11}, dflt), InvalidArgument);
  CHECK_THROWS_AS(global_to_triplet(0, dflt), InvalidArgument);
  CHECK_THROWS_AS(global_to_triplet(4001, dflt), InvalidArgument);
}

TEST_CASE("rayleigh_distance is 2 D^2 / lambda") {
  const SystemConfig cfg = bench_system(16, 16);
  const double d = cfg.aperture_m();
  CHECK(rayleigh_distance(cfg) ==
        doctest::Approx(2.0 * d * d / cfg.wavelength()).epsilon(1e-14));
}

TEST_CASE("grids: uniform angles, inverse-distance rings, resolved ceiling") {
  const SystemConfig cfg = bench_system();
  CodebookLayout layout = bench_layout();
  const PolarCodebook cb = build_codebook(cfg, layout);

  const auto& az = cb.azimuth_grid();
  REQUIRE(az.size() == layout.n_azimuth);
  CHECK(az[0] == doctest::Approx(layout.azimuth_min_rad));
  CHECK(az[az.size() - 1] == doctest::Approx(layout.azimuth_max_rad));
  for (int i = 2; i < az.size(); ++i)
    CHECK(az[i] - az[i - 1] == doctest::Approx(az[1] - az[0]).epsilon(1e-12));

  const auto& el = cb.elevation_grid();
  CHECK(el[0] == doctest::Approx(layout.elevation_min_rad));
  CHECK(el[el.size() - 1] == doctest::Approx(layout.elevation_max_rad));

  // r_max <= 0 resolves to 0.9 x Rayleigh distance (full-size panel, where
  // that ceiling exceeds r_min).
  {
    const SystemConfig big;  // 16 x 16
    CodebookLayout auto_ceiling = bench_layout();
    auto_ceiling.r_max_m = -1.0;
    const PolarCodebook cb_auto = build_codebook(big, auto_ceiling);
    CHECK(cb_auto.layout().r_max_m ==
          doctest::Approx(0.9 * rayleigh_distance(big)).epsilon(1e-14));
    CHECK(cb_auto.layout().r_max_m > auto_ceiling.r_min_m);
  }

  // Ring 1 closest, last ring farthest, and 1/r is uniformly spaced.
  const auto& rg = cb.distance_grid();
  REQUIRE(rg.size() == layout.n_distance);
  CHECK(rg[0] == doctest::Approx(layout.r_min_m));
  CHECK(rg[rg.size() - 1] == doctest::Approx(cb.layout().r_max_m));
  for (int q = 1; q < rg.size(); ++q) CHECK(rg[q] > rg[q - 1]);
  const double d_inv = 1.0 / rg[1] - 1.0 / rg[0];
  for (int q = 2; q < rg.size(); ++q)
    CHECK(1.0 / rg[q] - 1.0 / rg[q - 1] == doctest::Approx(d_inv).epsilon(1e-10));

  // Single-sample axes collapse to the interval midpoint.
  CodebookLayout flat = layout;
  flat.n_elevation = 1;
  const PolarCodebook cb1 = build_codebook(cfg, flat);
  CHECK(cb1.elevation_grid()[0] ==
        doctest::Approx(0.5 * (flat.elevation_min_rad + flat.elevation_max_rad)));
}

TEST_CASE("layout validation rejects inverted ranges and bad ring counts") {
  CodebookLayout bad = bench_layout();
  bad.n_distance = 0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = bench_layout();
  bad.azimuth_min_rad = 1.0;
  bad.azimuth_max_rad = -1.0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = bench_layout();
  bad.r_min_m = 0.0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = bench_layout();
  bad.r_max_m = bad.r_min_m;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("every codeword has unit norm") {
  const PolarCodebook cb = build_codebook(bench_system(), bench_layout());
  for (int k = 1; k <= cb.size(); k += 7)
    CHECK(cb.codeword(k).norm() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(cb.codeword(0), InvalidArgument);
  CHECK_THROWS_AS(cb.codeword(cb.size() + 1), InvalidArgument);
}

TEST_CASE("focusing on a sample point achieves the coherent-combining bound") {
  const SystemConfig cfg = bench_system();
  const PolarCodebook cb = build_codebook(cfg, bench_layout());
  const int m = cfg.num_elements();

  for (int k : {1, 37, 60, cb.size()}) {
    const Vec3 p = cb.sample_point(k);
    const ChannelSnapshot snap = los_snapshot_at(p, cfg);
    const double a = cfg.wavelength() / (4.0 * kPi * p.norm());
    // Perfect phase conjugation: |w^H h|^2 = M A^2 (Cauchy-Schwarz equality).
    CHECK(cb.gain(k, snap.h) == doctest::Approx(m * a * a).epsilon(1e-12));
    // No other codeword can beat it, and the oracle recovers the generator.
    const OracleResult best = oracle_optimal(cb, snap);
    CHECK(best.global_index == k);
    CHECK(best.triplet == global_to_triplet(k, cb.layout()));
    CHECK(cb.gain_sweep(snap.h).maxCoeff() ==
          doctest::Approx(cb.gain(k, snap.h)).epsilon(1e-12));
  }
}

TEST_CASE("sweeps agree with per-codeword evaluation") {
  const SystemConfig cfg = bench_system();
  const PolarCodebook cb = build_codebook(cfg, bench_layout());
  const ChannelSnapshot snap = los_snapshot_at(Vec3(4.0, 1.0, 0.3), cfg);

  const Eigen::VectorXcd sig = cb.signal_sweep(snap.h);
  const Eigen::VectorXd gains = cb.gain_sweep(snap.h);
  REQUIRE(sig.size() == cb.size());
  for (int k = 1; k <= cb.size(); ++k) {
    const Eigen::VectorXcd w = cb.codeword(k);
    CHECK(std::abs(sig[k - 1] - w.dot(snap.h)) < 1e-15);
    CHECK(gains[k - 1] == doctest::Approx(beam_gain(w, snap.h)).epsilon(1e-12));
    CHECK(gains[k - 1] == doctest::Approx(cb.gain(k, snap.h)).epsilon(1e-12));
  }

  Eigen::VectorXcd wrong = Eigen::VectorXcd::Zero(3);
  CHECK_THROWS_AS(cb.gain_sweep(wrong), InvalidArgument);
  CHECK_THROWS_AS(cb.gain(1, wrong), InvalidArgument);
}

TEST_CASE("oracle_optimal equals an independent argmax with first-wins ties") {
  const SystemConfig cfg = bench_system(4, 4);
  const PolarCodebook cb = build_codebook(cfg, bench_layout());

  for (int s = 0; s < 20; ++s) {
    RandomStream rs(1000 + static_cast<std::uint64_t>(s), 1);
    Eigen::VectorXcd h(cfg.num_elements());
    for (int i = 0; i < h.size(); ++i) h[i] = rs.complex_normal(1.0);
    ChannelSnapshot snap;
    snap.h = h;
    snap.paths.resize(1);  // mark as non-outage

    int best = 1;
    double best_gain = beam_gain(cb.codeword(1), h);
    for (int k = 2; k <= cb.size(); ++k) {
      const double g = beam_gain(cb.codeword(k), h);
      if (g > best_gain * (1.0 + 1e-12)) {
        best = k;
        best_gain = g;
      }
    }
    const OracleResult res = oracle_optimal(cb, snap);
    CHECK(res.global_index == best);
    CHECK(res.gain == doctest::Approx(best_gain).epsilon(1e-12));
    CHECK_FALSE(res.outage);
  }

  // All-zero channel: outage, deterministic fallback to index 1.
  ChannelSnapshot dead;
  dead.h = Eigen::VectorXcd::Zero(cfg.num_elements());
  const OracleResult res = oracle_optimal(cb, dead);
  CHECK(res.outage);
  CHECK(res.global_index == 1);
  CHECK(res.gain == 0.0);
}

TEST_CASE("achievable_rate is log2(1 + P G / sigma^2)") {
  SystemConfig cfg = bench_system();
  cfg.tx_power_watts = 2.0;
  cfg.noise_variance = 0.5;
  CHECK(achievable_rate(1.5, cfg) ==
        doctest::Approx(std::log2(1.0 + 2.0 * 1.5 / 0.5)).epsilon(1e-14));
  CHECK(achievable_rate(0.0, cfg) == 0.0);
}

TEST_CASE("codebook cache round-trips bit-exactly and rejects corruption") {
  const SystemConfig cfg = bench_system();
  const PolarCodebook cb = build_codebook(cfg, bench_layout());
  const std::string path = temp_path("cb_cache_test.bin");
  save_codebook(cb, path);

  const PolarCodebook back = load_codebook(path);
  CHECK(back.content_hash() == cb.content_hash());
  CHECK(back.size() == cb.size());
  CHECK(back.num_antennas() == cb.num_antennas());
  CHECK(back.layout().r_max_m == cb.layout().r_max_m);
  for (int k = 1; k <= cb.size(); k += 11) {
    const Eigen::VectorXcd a = cb.codeword(k), b = back.codeword(k);
    CHECK((a - b).norm() == 0.0);  // bitwise payload equality
  }
  for (int q = 0; q < cb.layout().n_distance; ++q)
    CHECK(back.distance_grid()[q] == cb.distance_grid()[q]);

  // Flip one payload byte: integrity hash must catch it.
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(200, std::ios::beg);
    char c;
    f.seekg(200, std::ios::beg);
    f.get(c);
    c = static_cast<char>(c ^ 0x5a);
    f.seekp(200, std::ios::beg);
    f.put(c);
  }
  CHECK_THROWS_AS(load_codebook(path), IoError);

  // Truncation and bad magic are also rejected.
  save_codebook(cb, path);
  {
    std::ifstream in(path, std::ios::binary);
    std::vector<char> all((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(all.data(), static_cast<std::streamsize>(all.size() / 2));
  }
  CHECK_THROWS_AS(load_codebook(path), IoError);
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write("XXXXXXXX", 8);
  }
  CHECK_THROWS_AS(load_codebook(path), IoError);
  CHECK_THROWS_AS(load_codebook("./does_not_exist.bin"), IoError);
  std::remove(path.c_str());
}

TEST_CASE("content hash keys the build inputs") {
  const SystemConfig cfg = bench_system();
  const CodebookLayout layout = bench_layout();
  const std::uint64_t h0 = codebook_content_hash(cfg, layout);
  CHECK(h0 == codebook_content_hash(cfg, layout));
  CHECK(h0 == build_codebook(cfg, layout).content_hash());

  SystemConfig cfg2 = cfg;
  cfg2.carrier_frequency_hz *= 1.001;
  CHECK(codebook_content_hash(cfg2, layout) != h0);
  CodebookLayout l2 = layout;
  l2.n_distance += 1;
  CHECK(codebook_content_hash(cfg, l2) != h0);
  CodebookLayout l3 = layout;
  l3.r_min_m = 2.6;
  CHECK(codebook_content_hash(cfg, l3) != h0);
  // Transmit power does not change the codebook geometry.
  SystemConfig cfg3 = cfg;
  cfg3.tx_power_watts *= 2;
  CHECK(codebook_content_hash(cfg3, layout) == h0);
}
