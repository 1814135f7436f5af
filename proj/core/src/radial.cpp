#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "plcgrid/error.hpp"
#include "plcgrid/stateseq.hpp"

namespace plcgrid::stateseq {

namespace {

constexpr std::array<const char*, 12> kDefaultPalette = {
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
    "#e377c2", "#bcbd22", "#17becf", "#aec7e8", "#ffbb78", "#98df8a"};
constexpr const char* kNoiseColour = "#7f7f7f";
constexpr int kDaysPerYearRing = 365;

struct Cell {
  std::size_t ring;
  std::size_t slot;
  int state;
};

std::string fmt(double v) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(3);
  os << v;
  return os.str();
}

// Annulus sector between radii r0 < r1 and angles a0 < a1 (radians, clockwise from 12 o'clock).
std::string sector_path(double cx, double cy, double r0, double r1, double a0, double a1) {
  auto px = [&](double r, double a) { return fmt(cx + r * std::sin(a)); };
  auto py = [&](double r, double a) { return fmt(cy - r * std::cos(a)); };
  const int large = (a1 - a0) > std::numbers::pi ? 1 : 0;
  std::string d;
  d += "M" + px(r1, a0) + "," + py(r1, a0);
  d += " A" + fmt(r1) + "," + fmt(r1) + " 0 " + std::to_string(large) + " 1 " + px(r1, a1) + "," + py(r1, a1);
  d += " L" + px(r0, a1) + "," + py(r0, a1);
  d += " A" + fmt(r0) + "," + fmt(r0) + " 0 " + std::to_string(large) + " 0 " + px(r0, a0) + "," + py(r0, a0);
  d += " Z";
  return d;
}

std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

RadialPeriod parse_period(std::string_view name) {
  if (name == "day") return RadialPeriod::day;
  if (name == "year") return RadialPeriod::year;
  throw InvalidArgument("unknown radial period '" + std::string(name) + "' (expected day or year)");
}

std::string render_radial(const StateSequence& seq, RadialPeriod period,
                          std::span<const std::string> palette) {
  if (seq.size() == 0) throw InvalidArgument("render_radial: empty sequence");
  if (seq.timestamps.size() != seq.states.size()) {
    throw InvalidArgument("render_radial: timestamps and states differ in length");
  }

  const std::int64_t first_day = day_of(seq.timestamps.front());
  std::vector<Cell> cells;
  std::size_t slots_per_ring = kSlotsPerDay;
  if (period == RadialPeriod::day) {
    for (std::size_t i = 0; i < seq.size(); ++i) {
      const Timestamp ts = seq.timestamps[i];
      const auto ring = static_cast<std::size_t>(day_of(ts) - first_day);
      const auto slot = static_cast<std::size_t>((ts - day_of(ts) * kDaySeconds) / kSlotSeconds);
      cells.push_back({ring, slot, seq.states[i]});
    }
  } else {
    slots_per_ring = kDaysPerYearRing;
    std::map<std::int64_t, std::vector<int>> by_day;
    for (std::size_t i = 0; i < seq.size(); ++i) by_day[day_of(seq.timestamps[i])].push_back(seq.states[i]);
    for (const auto& [day, states] : by_day) {
      const auto offset = static_cast<std::size_t>(day - first_day);
      cells.push_back({offset / kDaysPerYearRing, offset % kDaysPerYearRing,
                       embed::majority_label(states)});
    }
  }

  std::size_t rings = 0;
  std::set<int> states;
  for (const auto& c : cells) {
    rings = std::max(rings, c.ring + 1);
    states.insert(c.state);
  }

  std::map<int, std::string> colour;
  std::size_t next = 0;
  for (int s : states) {
    if (s < 0) {
      colour[s] = kNoiseColour;
      continue;
    }
    colour[s] = next < palette.size() ? palette[next]
                                      : std::string(kDefaultPalette[next % kDefaultPalette.size()]);
    ++next;
  }

  const double inner = 40.0;
  const double ring_width = std::max(2.0, 200.0 / static_cast<double>(rings));
  const double outer = inner + ring_width * static_cast<double>(rings);
  const double size = 2.0 * outer + 40.0;
  const double cx = size / 2.0;
  const double cy = size / 2.0;
  const double legend_w = 160.0;
  const double step = 2.0 * std::numbers::pi / static_cast<double>(slots_per_ring);

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << fmt(size + legend_w)
      << "\" height=\"" << fmt(std::max(size, 30.0 + 18.0 * static_cast<double>(states.size())))
      << "\" data-period=\"" << (period == RadialPeriod::day ? "day" : "year") << "\" data-rings=\""
      << rings << "\" data-arcs=\"" << cells.size() << "\">\n";
  svg << "  <title>" << escape(seq.connection_id) << "</title>\n";
  for (std::size_t r = 0; r < rings; ++r) {
    const double r0 = inner + ring_width * static_cast<double>(r);
    svg << "  <g class=\"ring\" data-index=\"" << r << "\">\n";
    for (const auto& c : cells) {
      if (c.ring != r) continue;
      const double a0 = step * static_cast<double>(c.slot);
      svg << "    <path class=\"arc\" data-state=\"" << c.state << "\" fill=\"" << escape(colour[c.state])
          << "\" d=\"" << sector_path(cx, cy, r0, r0 + ring_width, a0, a0 + step) << "\"/>\n";
    }
    svg << "  </g>\n";
  }
  svg << "  <g class=\"legend\">\n";
  double y = 20.0;
  for (int s : states) {
    svg << "    <rect class=\"legend-swatch\" x=\"" << fmt(size) << "\" y=\"" << fmt(y - 10.0)
        << "\" width=\"12\" height=\"12\" fill=\"" << escape(colour[s]) << "\"/>\n";
    svg << "    <text x=\"" << fmt(size + 18.0) << "\" y=\"" << fmt(y) << "\" font-size=\"12\">"
        << (s < 0 ? std::string("noise") : "state " + std::to_string(s)) << "</text>\n";
    y += 18.0;
  }
  svg << "  </g>\n</svg>\n";
  return svg.str();
}

}  // namespace plcgrid::stateseq
