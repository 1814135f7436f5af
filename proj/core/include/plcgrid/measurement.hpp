#pragma once

// Canonical data model for PLC SNR measurements: spectra, tone maps, per-phase
// node readings, the CSV file format, gap filling and day windows.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace plcgrid {

inline constexpr std::size_t kChannels = 917;
inline constexpr std::size_t kToneLevels = 8;
inline constexpr std::int64_t kSlotSeconds = 15 * 60;
inline constexpr std::int64_t kDaySeconds = 24 * 60 * 60;
inline constexpr std::size_t kSlotsPerDay = 96;

/// UTC seconds since the Unix epoch.
using Timestamp = std::int64_t;

/// Measuring-hardware generation; fixes the valid dB range.
enum class Profile { fin1, fin2 };

struct DbRange {
  float min;
  float max;
};

DbRange db_range(Profile profile);
Profile parse_profile(std::string_view name);
std::string_view to_string(Profile profile);

/// "YYYY-MM-DDTHH:MM:SSZ".
std::string format_iso8601(Timestamp ts);
Timestamp parse_iso8601(std::string_view text);
/// Days since 1970-01-01 (floor division).
std::int64_t day_of(Timestamp ts);
/// "YYYY-MM-DD" for a day index.
std::string format_date(std::int64_t day);
std::int64_t parse_date(std::string_view text);

/// Rounds a dB value to the 3-decimal grid used by the file format, so that a
/// value survives a write/read cycle bit for bit.
float quantize_db(double value);

class ChannelSpectrum {
 public:
  ChannelSpectrum(std::vector<float> values, DbRange range);

  std::span<const float> values() const noexcept { return values_; }
  DbRange range() const noexcept { return range_; }
  float operator[](std::size_t i) const { return values_[i]; }
  std::size_t size() const noexcept { return values_.size(); }

 private:
  std::vector<float> values_;
  DbRange range_;
};

class ToneMap {
 public:
  explicit ToneMap(std::vector<std::uint8_t> levels);

  std::span<const std::uint8_t> levels() const noexcept { return levels_; }
  std::uint8_t operator[](std::size_t i) const { return levels_[i]; }

 private:
  std::vector<std::uint8_t> levels_;
};

struct PhaseMeasurement {
  std::array<double, 3> voltage{};
  std::array<double, 3> thd{};
  std::array<double, 3> phase_angle{};

  bool operator==(const PhaseMeasurement&) const = default;
};

void validate(const PhaseMeasurement& m);

/// Uniform 8-bin quantization of the dB range; monotone in SNR.
ToneMap derive_tonemap(const ChannelSpectrum& spectrum);
void derive_tonemap(std::span<const float> snr, DbRange range, std::span<std::uint8_t> out);

/// Time-indexed SNR spectra of one connection. Immutable once constructed; the
/// constructor enforces every invariant of the data model.
class MeasurementSeries {
 public:
  MeasurementSeries(std::string connection_id, Profile profile, std::vector<Timestamp> timestamps,
                    std::vector<float> snr, std::vector<std::uint8_t> tonemaps = {},
                    std::vector<PhaseMeasurement> phases = {});

  const std::string& connection_id() const noexcept { return connection_id_; }
  Profile profile() const noexcept { return profile_; }
  DbRange range() const noexcept { return db_range(profile_); }
  std::size_t size() const noexcept { return timestamps_.size(); }
  bool empty() const noexcept { return timestamps_.empty(); }

  std::span<const Timestamp> timestamps() const noexcept { return timestamps_; }
  /// Row-major t x 917 matrix.
  std::span<const float> snr() const noexcept { return snr_; }
  std::span<const float> spectrum(std::size_t t) const {
    return std::span<const float>(snr_).subspan(t * kChannels, kChannels);
  }
  ChannelSpectrum spectrum_at(std::size_t t) const;

  bool has_tonemaps() const noexcept { return !tonemaps_.empty(); }
  std::span<const std::uint8_t> tonemaps() const noexcept { return tonemaps_; }
  std::span<const std::uint8_t> tonemap(std::size_t t) const {
    return std::span<const std::uint8_t>(tonemaps_).subspan(t * kChannels, kChannels);
  }

  bool has_phases() const noexcept { return !phases_.empty(); }
  std::span<const PhaseMeasurement> phases() const noexcept { return phases_; }

  std::optional<std::size_t> index_of(Timestamp ts) const;

  bool operator==(const MeasurementSeries&) const = default;

 private:
  std::string connection_id_;
  Profile profile_;
  std::vector<Timestamp> timestamps_;
  std::vector<float> snr_;
  std::vector<std::uint8_t> tonemaps_;
  std::vector<PhaseMeasurement> phases_;
};

/// Parses the per-connection CSV format. Rows may appear in any order and are
/// returned sorted by timestamp.
MeasurementSeries parse_measurement_file(std::string_view bytes, Profile profile,
                                         std::string connection_id = {});
std::string serialize_measurement_file(const MeasurementSeries& series);

enum class GapPolicy { hold_last, linear, reject };

struct FilledSeries {
  MeasurementSeries series;
  /// Row indices (into `series`) that were synthesized by the fill.
  std::vector<std::size_t> filled_rows;
};

inline constexpr std::size_t kDefaultMaxGapSteps = 8;

/// Makes the series contiguous on the 15-minute grid.
FilledSeries fill_gaps(const MeasurementSeries& series, GapPolicy policy,
                       std::size_t max_gap_steps = kDefaultMaxGapSteps);

struct DayWindow {
  std::string connection_id;
  std::int64_t day = 0;
  /// 96 x 917, row-major.
  std::vector<float> matrix;
  std::vector<std::size_t> filled_slots;

  std::span<const float> row(std::size_t slot) const {
    return std::span<const float>(matrix).subspan(slot * kChannels, kChannels);
  }
};

inline constexpr double kMinDayCoverage = 0.5;

/// Extracts one UTC day as a 96 x 917 matrix, holding the last value across
/// missing slots (leading gaps take the first present slot).
DayWindow window_day(const MeasurementSeries& series, std::int64_t day);

}  // namespace plcgrid
