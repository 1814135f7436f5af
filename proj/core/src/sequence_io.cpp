#include <charconv>

#include "plcgrid/error.hpp"
#include "plcgrid/stateseq.hpp"

namespace plcgrid::stateseq {

std::string state_sequence_to_csv(const StateSequence& seq) {
  if (seq.timestamps.size() != seq.states.size()) {
    throw InvalidArgument("state sequence has " + std::to_string(seq.timestamps.size()) +
                          " timestamps but " + std::to_string(seq.states.size()) + " states");
  }
  std::string out = "timestamp,state\n";
  out.reserve(out.size() + seq.size() * 24);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    out += format_iso8601(seq.timestamps[i]);
    out += ',';
    out += std::to_string(seq.states[i]);
    out += '\n';
  }
  return out;
}

StateSequence state_sequence_from_csv(std::string_view text, std::string connection_id) {
  StateSequence seq;
  seq.connection_id = std::move(connection_id);
  std::size_t line_no = 0;
  bool header = true;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line != "timestamp,state") throw ParseError("expected header 'timestamp,state'", line_no);
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string_view::npos) throw ParseError("expected 2 fields", line_no);
    const Timestamp ts = parse_iso8601(line.substr(0, comma));
    const auto field = line.substr(comma + 1);
    int state = 0;
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), state);
    if (ec != std::errc{} || ptr != field.data() + field.size()) {
      throw ParseError("bad state '" + std::string(field) + "'", line_no);
    }
    if (!seq.timestamps.empty() && ts <= seq.timestamps.back()) {
      throw ParseError("timestamps must be strictly ascending", line_no);
    }
    seq.timestamps.push_back(ts);
    seq.states.push_back(state);
  }
  if (header) throw ParseError("empty state sequence file");
  return seq;
}

}  // namespace plcgrid::stateseq
