#include <doctest.h>

#include <algorithm>
#include <string>

#include "helpers.hpp"
#include "plcgrid/error.hpp"
#include "plcgrid/measurement.hpp"

using namespace plcgrid;
using plcgrid::testing::flat_series;
using plcgrid::testing::kT0;
using plcgrid::testing::slots;

namespace {

std::string two_row_file() {
  return serialize_measurement_file(flat_series(slots(2), [](std::size_t r) { return 5.0 + r; }));
}

}  // namespace

TEST_CASE("measurement file: header plus two rows parses to two timesteps") {
  const auto s = parse_measurement_file(two_row_file(), Profile::fin2);
  CHECK(s.size() == 2);
  CHECK(s.spectrum(1)[0] == doctest::Approx(6.0));
  CHECK_FALSE(s.has_tonemaps());
}

TEST_CASE("measurement file: SNR above the fin2 maximum is a validation error") {
  auto text = two_row_file();
  const auto row = text.find('\n') + 1;
  const auto field = text.find(',', row) + 1;
  text.replace(field, text.find(',', field) - field, "57");
  CHECK_THROWS_AS(parse_measurement_file(text, Profile::fin2), ValidationError);
}

TEST_CASE("measurement file: empty input reports no rows") {
  try {
    parse_measurement_file("", Profile::fin2);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("no rows") != std::string::npos);
  }
}

TEST_CASE("measurement file: malformed row names its line") {
  auto text = two_row_file();
  text += "2021-01-01T00:30:00Z,oops\n";
  try {
    parse_measurement_file(text, Profile::fin2);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 4);
  }
}

TEST_CASE("measurement file: duplicate timestamps are rejected") {
  auto text = two_row_file();
  const auto last = text.rfind('\n', text.size() - 2) + 1;
  text += text.substr(last);
  CHECK_THROWS_AS(parse_measurement_file(text, Profile::fin2), ValidationError);
}

TEST_CASE("measurement file: rows out of order come back sorted") {
  const auto text = two_row_file();
  const auto header_end = text.find('\n') + 1;
  const auto second = text.find('\n', header_end) + 1;
  const auto shuffled = text.substr(0, header_end) + text.substr(second) + text.substr(header_end, second - header_end);
  const auto s = parse_measurement_file(shuffled, Profile::fin2);
  CHECK(s.timestamps()[0] < s.timestamps()[1]);
  CHECK(s.spectrum(0)[0] == doctest::Approx(5.0));
}

TEST_CASE("measurement file: write then read is bit exact") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto profile = seed % 2 ? Profile::fin2 : Profile::fin1;
    const auto s = plcgrid::testing::random_series(3 + seed, seed, profile);
    CHECK(parse_measurement_file(serialize_measurement_file(s), profile, s.connection_id()) == s);
  }
}

TEST_CASE("measurement file: tone maps and phase readings survive a round trip") {
  auto base = plcgrid::testing::random_series(2, 9);
  std::vector<float> snr(base.snr().begin(), base.snr().end());
  std::vector<std::uint8_t> tm(snr.size());
  derive_tonemap(snr, base.range(), tm);
  PhaseMeasurement p{{230.1, 229.5, 231.0}, {2.5, 3.0, 1.25}, {0.0, 120.0, 240.0}};
  MeasurementSeries s("n001-n002", Profile::fin2, {base.timestamps().begin(), base.timestamps().end()}, snr, tm, {p, p});
  CHECK(parse_measurement_file(serialize_measurement_file(s), Profile::fin2, "n001-n002") == s);
}

TEST_CASE("tone map: clamps at both ends of the range") {
  const auto r = db_range(Profile::fin2);
  std::vector<float> v(kChannels, r.max);
  v[1] = r.min;
  const auto tm = derive_tonemap(ChannelSpectrum(v, r));
  CHECK(tm[0] == 7);
  CHECK(tm[1] == 0);
}

TEST_CASE("tone map: fin1 at 20 dB is level 4") {
  std::vector<float> v(kChannels, 20.0f);
  CHECK(derive_tonemap(ChannelSpectrum(v, db_range(Profile::fin1)))[0] == 4);
}

TEST_CASE("tone map: monotone in SNR on every channel") {
  Rng rng(3);
  const auto r = db_range(Profile::fin2);
  std::uniform_real_distribution<double> u(r.min, r.max);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<float> a(kChannels), b(kChannels);
    for (std::size_t i = 0; i < kChannels; ++i) {
      const float x = static_cast<float>(u(rng)), y = static_cast<float>(u(rng));
      a[i] = std::min(x, y);
      b[i] = std::max(x, y);
    }
    const auto ta = derive_tonemap(ChannelSpectrum(a, r)), tb = derive_tonemap(ChannelSpectrum(b, r));
    for (std::size_t i = 0; i < kChannels; ++i) REQUIRE(ta[i] <= tb[i]);
  }
}

TEST_CASE("fill_gaps: contiguous input is unchanged") {
  const auto s = flat_series(slots(5), [](std::size_t r) { return 1.0 * r; });
  const auto f = fill_gaps(s, GapPolicy::hold_last);
  CHECK(f.series == s);
  CHECK(f.filled_rows.empty());
}

TEST_CASE("fill_gaps: one missing step under hold_last copies the previous spectrum") {
  auto ts = slots(5);
  ts.erase(ts.begin() + 2);
  const auto s = flat_series(ts, [](std::size_t r) { return 1.0 + r; });
  const auto f = fill_gaps(s, GapPolicy::hold_last);
  REQUIRE(f.series.size() == 5);
  CHECK(f.filled_rows == std::vector<std::size_t>{2});
  CHECK(f.series.spectrum(2)[100] == f.series.spectrum(1)[100]);
}

TEST_CASE("fill_gaps: linear interpolates across the gap") {
  auto ts = slots(4);
  ts.erase(ts.begin() + 1, ts.begin() + 3);
  const auto s = flat_series(ts, [](std::size_t r) { return r == 0 ? 0.0 : 3.0; });
  const auto f = fill_gaps(s, GapPolicy::linear);
  REQUIRE(f.series.size() == 4);
  CHECK(f.series.spectrum(1)[0] == doctest::Approx(1.0));
  CHECK(f.series.spectrum(2)[0] == doctest::Approx(2.0));
}

TEST_CASE("fill_gaps: a 10-step gap exceeds the default bound, reject refuses any gap") {
  std::vector<Timestamp> ts = {kT0, kT0 + 11 * kSlotSeconds};
  const auto s = flat_series(ts, [](std::size_t) { return 0.0; });
  CHECK_THROWS_AS(fill_gaps(s, GapPolicy::hold_last), ValidationError);
  std::vector<Timestamp> small = {kT0, kT0 + 2 * kSlotSeconds};
  CHECK_THROWS_AS(fill_gaps(flat_series(small, [](std::size_t) { return 0.0; }), GapPolicy::reject), ValidationError);
}

TEST_CASE("fill_gaps: originally present rows are never altered") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    auto full = plcgrid::testing::random_series(30, 100 + trial);
    std::vector<Timestamp> ts;
    std::vector<float> snr;
    std::bernoulli_distribution keep(0.8);
    for (std::size_t t = 0; t < full.size(); ++t) {
      if (t != 0 && t + 1 != full.size() && !keep(rng)) continue;
      ts.push_back(full.timestamps()[t]);
      snr.insert(snr.end(), full.spectrum(t).begin(), full.spectrum(t).end());
    }
    MeasurementSeries sparse("x", Profile::fin2, ts, snr);
    for (auto policy : {GapPolicy::hold_last, GapPolicy::linear}) {
      const auto f = fill_gaps(sparse, policy, 30);
      for (std::size_t t = 0; t < sparse.size(); ++t) {
        const auto row = f.series.index_of(sparse.timestamps()[t]);
        REQUIRE(row.has_value());
        CHECK(std::equal(sparse.spectrum(t).begin(), sparse.spectrum(t).end(), f.series.spectrum(*row).begin()));
      }
    }
  }
}

TEST_CASE("window_day: full, partial and insufficient days") {
  const auto day = day_of(kT0);
  const auto full = flat_series(slots(96), [](std::size_t r) { return 0.1 * r; });
  const auto w = window_day(full, day);
  CHECK(w.matrix.size() == 96 * kChannels);
  CHECK(w.filled_slots.empty());

  auto ts = slots(96);
  ts.erase(ts.begin() + 10, ts.begin() + 13);
  const auto w93 = window_day(flat_series(ts, [](std::size_t r) { return 0.1 * r; }), day);
  CHECK(w93.matrix.size() == 96 * kChannels);
  CHECK(w93.filled_slots.size() == 3);

  CHECK_THROWS_AS(window_day(flat_series(slots(40), [](std::size_t) { return 0.0; }), day), ValidationError);
}

TEST_CASE("window_day: a leading gap takes the first present slot") {
  auto ts = slots(96);
  ts.erase(ts.begin(), ts.begin() + 2);
  const auto w = window_day(flat_series(ts, [](std::size_t r) { return 2.0 + 0.1 * r; }), day_of(kT0));
  CHECK(w.row(0)[0] == doctest::Approx(2.0));
  CHECK(w.filled_slots == std::vector<std::size_t>{0, 1});
}

TEST_CASE("timestamps and phase readings validate") {
  CHECK(format_iso8601(kT0) == "2021-01-01T00:00:00Z");
  CHECK(parse_iso8601("2021-01-01T00:15:00Z") == kT0 + kSlotSeconds);
  CHECK_THROWS_AS(parse_iso8601("2021-13-01T00:00:00Z"), ParseError);
  PhaseMeasurement bad{{-1.0, 0.0, 0.0}, {}, {}};
  CHECK_THROWS_AS(validate(bad), ValidationError);
  PhaseMeasurement angle{{}, {}, {0.0, 360.0, 0.0}};
  CHECK_THROWS_AS(validate(angle), ValidationError);
}

TEST_CASE("series: off-grid timestamps are rejected") {
  CHECK_THROWS_AS(flat_series({kT0 + 7}, [](std::size_t) { return 0.0; }), ValidationError);
}
