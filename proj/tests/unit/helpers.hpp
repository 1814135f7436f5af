#pragma once

// Small fixture builders shared by the unit tests.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "plcgrid/measurement.hpp"
#include "plcgrid/random.hpp"
#include "plcgrid/sim.hpp"

namespace plcgrid::testing {

inline constexpr Timestamp kT0 = 1609459200;  // 2021-01-01T00:00:00Z

/// Series whose row r is filled with row_value(r) on every channel.
template <class F>
MeasurementSeries flat_series(std::vector<Timestamp> ts, F row_value, Profile profile = Profile::fin2,
                              std::string id = "n000-n001") {
  std::vector<float> snr;
  snr.reserve(ts.size() * kChannels);
  for (std::size_t r = 0; r < ts.size(); ++r) snr.insert(snr.end(), kChannels, quantize_db(row_value(r)));
  return MeasurementSeries(std::move(id), profile, std::move(ts), std::move(snr));
}

inline std::vector<Timestamp> slots(std::size_t n, Timestamp start = kT0) {
  std::vector<Timestamp> ts(n);
  for (std::size_t i = 0; i < n; ++i) ts[i] = start + static_cast<Timestamp>(i) * kSlotSeconds;
  return ts;
}

/// Random series inside the profile range, quantized to the file grid.
inline MeasurementSeries random_series(std::size_t n, std::uint64_t seed, Profile profile = Profile::fin2) {
  Rng rng(seed);
  const auto r = db_range(profile);
  std::uniform_real_distribution<double> u(r.min, r.max);
  std::vector<float> snr(n * kChannels);
  for (auto& v : snr) v = quantize_db(u(rng));
  return MeasurementSeries("n001-n002", profile, slots(n), std::move(snr));
}

/// Chain 0 - 1 - ... - (n-1) of equal sections without joints.
inline sim::GridTopology chain(int n, double length_m = 150.0, int hop_radius = 3) {
  sim::GridTopology t;
  for (int i = 0; i < n; ++i) t.nodes.push_back({i, i == 0 ? sim::NodeKind::substation : sim::NodeKind::household});
  for (int i = 0; i + 1 < n; ++i) {
    sim::CableSection s;
    s.id = i;
    s.a = i;
    s.b = i + 1;
    s.length_m = length_m;
    t.sections.push_back(s);
  }
  sim::enumerate_links(t, hop_radius);
  return t;
}

}  // namespace plcgrid::testing
