#include "plcgrid/measurement.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "plcgrid/error.hpp"

namespace plcgrid {

namespace {

constexpr std::size_t kPhaseColumns = 9;

std::string channel_column(char prefix0, char prefix1, std::size_t i) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "%c%c%03zu", prefix0, prefix1, i);
  return buf;
}

const std::array<std::string_view, kPhaseColumns> kPhaseNames = {
    "u1", "u2", "u3", "thd1", "thd2", "thd3", "ph1", "ph2", "ph3"};

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view field, T& out) {
  while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
  while (!field.empty() && (field.back() == ' ' || field.back() == '\r')) field.remove_suffix(1);
  if (field.empty()) return false;
  if (field.front() == '+') field.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), out);
  return ec == std::errc() && ptr == field.data() + field.size();
}

void append_fixed3(std::string& out, float v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, 3);
  out.append(buf, ptr);
}

void append_shortest(std::string& out, double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, ptr);
}

void check_range(std::span<const float> values, DbRange range) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float v = values[i];
    if (!(v >= range.min && v <= range.max)) {
      throw ValidationError("SNR value " + std::to_string(v) + " dB on channel " +
                            std::to_string(i) + " outside [" + std::to_string(range.min) + ", " +
                            std::to_string(range.max) + "]");
    }
  }
}

}  // namespace

DbRange db_range(Profile profile) {
  switch (profile) {
    case Profile::fin1:
      return {0.0f, 40.0f};
    case Profile::fin2:
      return {-10.0f, 40.0f};
  }
  throw InvalidArgument("unknown profile");
}

Profile parse_profile(std::string_view name) {
  if (name == "fin1") return Profile::fin1;
  if (name == "fin2") return Profile::fin2;
  throw InvalidArgument("unknown profile '" + std::string(name) + "' (expected fin1 or fin2)");
}

std::string_view to_string(Profile profile) { return profile == Profile::fin1 ? "fin1" : "fin2"; }

std::int64_t day_of(Timestamp ts) {
  return ts >= 0 ? ts / kDaySeconds : -((-ts + kDaySeconds - 1) / kDaySeconds);
}

std::string format_date(std::int64_t day) {
  using namespace std::chrono;
  const year_month_day ymd{sys_days{days{day}}};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

std::string format_iso8601(Timestamp ts) {
  const std::int64_t day = day_of(ts);
  const std::int64_t sec = ts - day * kDaySeconds;
  char buf[16];
  std::snprintf(buf, sizeof buf, "T%02d:%02d:%02dZ", static_cast<int>(sec / 3600),
                static_cast<int>(sec / 60 % 60), static_cast<int>(sec % 60));
  return format_date(day) + buf;
}

std::int64_t parse_date(std::string_view text) {
  using namespace std::chrono;
  int y = 0;
  unsigned m = 0, d = 0;
  if (text.size() != 10 || text[4] != '-' || text[7] != '-' ||
      !parse_number(text.substr(0, 4), y) || !parse_number(text.substr(5, 2), m) ||
      !parse_number(text.substr(8, 2), d)) {
    throw ParseError("invalid date '" + std::string(text) + "' (expected YYYY-MM-DD)");
  }
  const year_month_day ymd{year{y}, month{m}, day{d}};
  if (!ymd.ok()) throw ParseError("invalid calendar date '" + std::string(text) + "'");
  return sys_days{ymd}.time_since_epoch().count();
}

Timestamp parse_iso8601(std::string_view text) {
  while (!text.empty() && (text.back() == '\r' || text.back() == ' ')) text.remove_suffix(1);
  if (text.size() != 20 || text[10] != 'T' || text[13] != ':' || text[16] != ':' ||
      text[19] != 'Z') {
    throw ParseError("invalid timestamp '" + std::string(text) +
                     "' (expected YYYY-MM-DDTHH:MM:SSZ)");
  }
  int hh = 0, mm = 0, ss = 0;
  if (!parse_number(text.substr(11, 2), hh) || !parse_number(text.substr(14, 2), mm) ||
      !parse_number(text.substr(17, 2), ss) || hh > 23 || mm > 59 || ss > 59) {
    throw ParseError("invalid time of day in '" + std::string(text) + "'");
  }
  return parse_date(text.substr(0, 10)) * kDaySeconds + hh * 3600 + mm * 60 + ss;
}

float quantize_db(double value) {
  return static_cast<float>(static_cast<double>(std::llround(value * 1000.0)) / 1000.0);
}

ChannelSpectrum::ChannelSpectrum(std::vector<float> values, DbRange range)
    : values_(std::move(values)), range_(range) {
  if (values_.size() != kChannels) {
    throw ValidationError("spectrum must have " + std::to_string(kChannels) + " channels, got " +
                          std::to_string(values_.size()));
  }
  check_range(values_, range_);
}

ToneMap::ToneMap(std::vector<std::uint8_t> levels) : levels_(std::move(levels)) {
  if (levels_.size() != kChannels) throw ValidationError("tone map must have 917 levels");
  for (auto l : levels_) {
    if (l >= kToneLevels) throw ValidationError("tone map level " + std::to_string(l) + " > 7");
  }
}

void validate(const PhaseMeasurement& m) {
  for (int p = 0; p < 3; ++p) {
    if (!(m.voltage[p] >= 0.0)) throw ValidationError("negative voltage");
    if (!(m.thd[p] >= 0.0)) throw ValidationError("negative THD");
    if (!(m.phase_angle[p] >= 0.0 && m.phase_angle[p] < 360.0)) {
      throw ValidationError("phase angle outside [0, 360)");
    }
  }
}

void derive_tonemap(std::span<const float> snr, DbRange range, std::span<std::uint8_t> out) {
  const double bin = (static_cast<double>(range.max) - range.min) / kToneLevels;
  for (std::size_t i = 0; i < snr.size(); ++i) {
    const double level = std::floor((static_cast<double>(snr[i]) - range.min) / bin);
    out[i] = static_cast<std::uint8_t>(std::clamp(level, 0.0, 7.0));
  }
}

ToneMap derive_tonemap(const ChannelSpectrum& spectrum) {
  std::vector<std::uint8_t> levels(kChannels);
  derive_tonemap(spectrum.values(), spectrum.range(), levels);
  return ToneMap(std::move(levels));
}

MeasurementSeries::MeasurementSeries(std::string connection_id, Profile profile,
                                     std::vector<Timestamp> timestamps, std::vector<float> snr,
                                     std::vector<std::uint8_t> tonemaps,
                                     std::vector<PhaseMeasurement> phases)
    : connection_id_(std::move(connection_id)),
      profile_(profile),
      timestamps_(std::move(timestamps)),
      snr_(std::move(snr)),
      tonemaps_(std::move(tonemaps)),
      phases_(std::move(phases)) {
  const std::size_t t = timestamps_.size();
  if (snr_.size() != t * kChannels) {
    throw ValidationError("spectra count does not match timestamp count");
  }
  if (!tonemaps_.empty() && tonemaps_.size() != t * kChannels) {
    throw ValidationError("tone map count does not match timestamp count");
  }
  if (!phases_.empty() && phases_.size() != t) {
    throw ValidationError("phase measurement count does not match timestamp count");
  }
  for (std::size_t i = 0; i < t; ++i) {
    if (timestamps_[i] % kSlotSeconds != 0) {
      throw ValidationError("timestamp " + format_iso8601(timestamps_[i]) +
                            " is not on the 15-minute grid");
    }
    if (i > 0 && timestamps_[i] <= timestamps_[i - 1]) {
      throw ValidationError(timestamps_[i] == timestamps_[i - 1]
                                ? "duplicate timestamp " + format_iso8601(timestamps_[i])
                                : "timestamps not strictly increasing");
    }
  }
  check_range(snr_, range());
  for (auto l : tonemaps_) {
    if (l >= kToneLevels) throw ValidationError("tone map level " + std::to_string(l) + " > 7");
  }
  for (const auto& p : phases_) validate(p);
}

ChannelSpectrum MeasurementSeries::spectrum_at(std::size_t t) const {
  auto s = spectrum(t);
  return ChannelSpectrum(std::vector<float>(s.begin(), s.end()), range());
}

std::optional<std::size_t> MeasurementSeries::index_of(Timestamp ts) const {
  auto it = std::lower_bound(timestamps_.begin(), timestamps_.end(), ts);
  if (it == timestamps_.end() || *it != ts) return std::nullopt;
  return static_cast<std::size_t>(it - timestamps_.begin());
}

MeasurementSeries parse_measurement_file(std::string_view bytes, Profile profile,
                                         std::string connection_id) {
  const DbRange range = db_range(profile);
  std::size_t pos = 0;
  std::size_t line_no = 0;
  auto next_line = [&](std::string_view& line) {
    while (pos < bytes.size()) {
      auto nl = bytes.find('\n', pos);
      if (nl == std::string_view::npos) nl = bytes.size();
      line = bytes.substr(pos, nl - pos);
      pos = nl + 1;
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      if (!line.empty()) return true;
    }
    return false;
  };

  std::string_view line;
  if (!next_line(line)) throw ParseError("no rows");

  const auto header = split_fields(line);
  const std::size_t header_line = line_no;
  if (header.empty() || header[0] != "timestamp") {
    throw ParseError("header must start with 'timestamp'", header_line);
  }
  std::size_t col = 1;
  for (std::size_t i = 0; i < kChannels; ++i, ++col) {
    if (col >= header.size() || header[col] != channel_column('c', 'h', i)) {
      throw ParseError("expected column " + channel_column('c', 'h', i), header_line);
    }
  }
  bool has_tm = false;
  bool has_phase = false;
  if (col < header.size() && header[col] == "tm000") {
    for (std::size_t i = 0; i < kChannels; ++i, ++col) {
      if (col >= header.size() || header[col] != channel_column('t', 'm', i)) {
        throw ParseError("expected column " + channel_column('t', 'm', i), header_line);
      }
    }
    has_tm = true;
  }
  if (col < header.size()) {
    for (auto name : kPhaseNames) {
      if (col >= header.size() || header[col] != name) {
        throw ParseError("expected column " + std::string(name), header_line);
      }
      ++col;
    }
    has_phase = true;
  }
  if (col != header.size()) throw ParseError("unexpected trailing header columns", header_line);
  const std::size_t width = header.size();

  struct Row {
    Timestamp ts;
    std::size_t line;
    std::size_t index;
  };
  std::vector<Row> rows;
  std::vector<float> snr;
  std::vector<std::uint8_t> tms;
  std::vector<PhaseMeasurement> phases;

  while (next_line(line)) {
    const auto fields = split_fields(line);
    if (fields.size() != width) {
      throw ParseError("expected " + std::to_string(width) + " fields, got " +
                           std::to_string(fields.size()),
                       line_no);
    }
    Timestamp ts = 0;
    try {
      ts = parse_iso8601(fields[0]);
    } catch (const ParseError& e) {
      throw ParseError(e.what(), line_no);
    }
    std::size_t c = 1;
    for (std::size_t i = 0; i < kChannels; ++i, ++c) {
      float v = 0;
      if (!parse_number(fields[c], v)) {
        throw ParseError("malformed SNR value '" + std::string(fields[c]) + "'", line_no);
      }
      if (!(v >= range.min && v <= range.max)) {
        throw ValidationError("line " + std::to_string(line_no) + ": SNR " + std::string(fields[c]) +
                              " dB outside [" + std::to_string(range.min) + ", " +
                              std::to_string(range.max) + "] for profile " +
                              std::string(to_string(profile)));
      }
      snr.push_back(v);
    }
    if (has_tm) {
      for (std::size_t i = 0; i < kChannels; ++i, ++c) {
        unsigned v = 0;
        if (!parse_number(fields[c], v) || v >= kToneLevels) {
          throw ParseError("tone map level '" + std::string(fields[c]) + "' not in 0..7", line_no);
        }
        tms.push_back(static_cast<std::uint8_t>(v));
      }
    }
    if (has_phase) {
      PhaseMeasurement m;
      double* targets[kPhaseColumns] = {&m.voltage[0], &m.voltage[1],     &m.voltage[2],
                                        &m.thd[0],     &m.thd[1],         &m.thd[2],
                                        &m.phase_angle[0], &m.phase_angle[1], &m.phase_angle[2]};
      for (std::size_t k = 0; k < kPhaseColumns; ++k, ++c) {
        if (!parse_number(fields[c], *targets[k])) {
          throw ParseError("malformed value in column " + std::string(kPhaseNames[k]), line_no);
        }
      }
      try {
        validate(m);
      } catch (const ValidationError& e) {
        throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
      }
      phases.push_back(m);
    }
    rows.push_back({ts, line_no, rows.size()});
  }
  if (rows.empty()) throw ParseError("no rows");

  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.ts < b.ts; });
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].ts == rows[i - 1].ts) {
      throw ValidationError("line " + std::to_string(rows[i].line) + ": duplicate timestamp " +
                            format_iso8601(rows[i].ts));
    }
  }
  for (const auto& r : rows) {
    if (r.ts % kSlotSeconds != 0) {
      throw ValidationError("line " + std::to_string(r.line) + ": timestamp " +
                            format_iso8601(r.ts) + " is not on the 15-minute grid");
    }
  }

  std::vector<Timestamp> ts_sorted;
  std::vector<float> snr_sorted;
  std::vector<std::uint8_t> tm_sorted;
  std::vector<PhaseMeasurement> ph_sorted;
  ts_sorted.reserve(rows.size());
  snr_sorted.reserve(snr.size());
  for (const auto& r : rows) {
    ts_sorted.push_back(r.ts);
    auto s = std::span<const float>(snr).subspan(r.index * kChannels, kChannels);
    snr_sorted.insert(snr_sorted.end(), s.begin(), s.end());
    if (has_tm) {
      auto t = std::span<const std::uint8_t>(tms).subspan(r.index * kChannels, kChannels);
      tm_sorted.insert(tm_sorted.end(), t.begin(), t.end());
    }
    if (has_phase) ph_sorted.push_back(phases[r.index]);
  }
  return MeasurementSeries(std::move(connection_id), profile, std::move(ts_sorted),
                           std::move(snr_sorted), std::move(tm_sorted), std::move(ph_sorted));
}

std::string serialize_measurement_file(const MeasurementSeries& series) {
  std::string out;
  out.reserve((series.size() + 1) * kChannels * (series.has_tonemaps() ? 9 : 7));
  out += "timestamp";
  for (std::size_t i = 0; i < kChannels; ++i) (out += ',') += channel_column('c', 'h', i);
  if (series.has_tonemaps()) {
    for (std::size_t i = 0; i < kChannels; ++i) (out += ',') += channel_column('t', 'm', i);
  }
  if (series.has_phases()) {
    for (auto name : kPhaseNames) (out += ',') += name;
  }
  out += '\n';
  for (std::size_t t = 0; t < series.size(); ++t) {
    out += format_iso8601(series.timestamps()[t]);
    for (float v : series.spectrum(t)) {
      out += ',';
      append_fixed3(out, v);
    }
    if (series.has_tonemaps()) {
      for (auto l : series.tonemap(t)) {
        out += ',';
        out += static_cast<char>('0' + l);
      }
    }
    if (series.has_phases()) {
      const auto& m = series.phases()[t];
      for (const auto* arr : {&m.voltage, &m.thd, &m.phase_angle}) {
        for (double v : *arr) {
          out += ',';
          append_shortest(out, v);
        }
      }
    }
    out += '\n';
  }
  return out;
}

FilledSeries fill_gaps(const MeasurementSeries& series, GapPolicy policy,
                       std::size_t max_gap_steps) {
  const auto ts = series.timestamps();
  std::vector<std::size_t> filled;
  if (series.size() < 2) return {series, filled};

  for (std::size_t i = 1; i < ts.size(); ++i) {
    const auto missing = static_cast<std::size_t>((ts[i] - ts[i - 1]) / kSlotSeconds - 1);
    if (missing == 0) continue;
    if (policy == GapPolicy::reject) {
      throw ValidationError("gap of " + std::to_string(missing) + " steps after " +
                            format_iso8601(ts[i - 1]) + " (policy reject)");
    }
    if (missing > max_gap_steps) {
      throw ValidationError("gap of " + std::to_string(missing) + " steps after " +
                            format_iso8601(ts[i - 1]) + " exceeds max_gap_steps " +
                            std::to_string(max_gap_steps));
    }
  }

  const std::size_t total = static_cast<std::size_t>((ts.back() - ts.front()) / kSlotSeconds) + 1;
  if (total == series.size()) return {series, filled};

  std::vector<Timestamp> out_ts;
  std::vector<float> out_snr;
  std::vector<std::uint8_t> out_tm;
  std::vector<PhaseMeasurement> out_ph;
  out_ts.reserve(total);
  out_snr.reserve(total * kChannels);

  auto push_row = [&](std::size_t src) {
    auto s = series.spectrum(src);
    out_snr.insert(out_snr.end(), s.begin(), s.end());
    if (series.has_tonemaps()) {
      auto t = series.tonemap(src);
      out_tm.insert(out_tm.end(), t.begin(), t.end());
    }
    if (series.has_phases()) out_ph.push_back(series.phases()[src]);
  };

  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (i > 0) {
      const auto missing = static_cast<std::size_t>((ts[i] - ts[i - 1]) / kSlotSeconds - 1);
      for (std::size_t k = 1; k <= missing; ++k) {
        filled.push_back(out_ts.size());
        out_ts.push_back(ts[i - 1] + static_cast<Timestamp>(k) * kSlotSeconds);
        if (policy == GapPolicy::hold_last) {
          push_row(i - 1);
          continue;
        }
        const double w = static_cast<double>(k) / static_cast<double>(missing + 1);
        auto a = series.spectrum(i - 1);
        auto b = series.spectrum(i);
        const std::size_t row_start = out_snr.size();
        for (std::size_t c = 0; c < kChannels; ++c) {
          out_snr.push_back(quantize_db((1.0 - w) * a[c] + w * b[c]));
        }
        if (series.has_tonemaps()) {
          out_tm.resize(out_tm.size() + kChannels);
          derive_tonemap(std::span<const float>(out_snr).subspan(row_start, kChannels),
                         series.range(),
                         std::span<std::uint8_t>(out_tm).subspan(out_tm.size() - kChannels));
        }
        if (series.has_phases()) {
          PhaseMeasurement m = series.phases()[i - 1];
          const auto& n = series.phases()[i];
          for (int p = 0; p < 3; ++p) {
            m.voltage[p] = (1.0 - w) * m.voltage[p] + w * n.voltage[p];
            m.thd[p] = (1.0 - w) * m.thd[p] + w * n.thd[p];
          }
          out_ph.push_back(m);
        }
      }
    }
    out_ts.push_back(ts[i]);
    push_row(i);
  }
  return {MeasurementSeries(series.connection_id(), series.profile(), std::move(out_ts),
                            std::move(out_snr), std::move(out_tm), std::move(out_ph)),
          std::move(filled)};
}

DayWindow window_day(const MeasurementSeries& series, std::int64_t day) {
  const Timestamp begin = day * kDaySeconds;
  const auto ts = series.timestamps();
  auto first = std::lower_bound(ts.begin(), ts.end(), begin);
  auto last = std::lower_bound(first, ts.end(), begin + kDaySeconds);
  const auto present = static_cast<std::size_t>(last - first);
  if (static_cast<double>(present) < kMinDayCoverage * kSlotsPerDay) {
    throw ValidationError("insufficient coverage for " + format_date(day) + " on " +
                          series.connection_id() + ": " + std::to_string(present) + " of 96 slots");
  }

  DayWindow w;
  w.connection_id = series.connection_id();
  w.day = day;
  w.matrix.resize(kSlotsPerDay * kChannels);
  std::vector<std::ptrdiff_t> source(kSlotsPerDay, -1);
  for (auto it = first; it != last; ++it) {
    source[static_cast<std::size_t>((*it - begin) / kSlotSeconds)] = it - ts.begin();
  }
  std::ptrdiff_t held = source[static_cast<std::size_t>((*first - begin) / kSlotSeconds)];
  for (std::size_t slot = 0; slot < kSlotsPerDay; ++slot) {
    if (source[slot] >= 0) {
      held = source[slot];
    } else {
      w.filled_slots.push_back(slot);
    }
    auto s = series.spectrum(static_cast<std::size_t>(held));
    std::copy(s.begin(), s.end(), w.matrix.begin() + static_cast<std::ptrdiff_t>(slot * kChannels));
  }
  return w;
}

}  // namespace plcgrid
