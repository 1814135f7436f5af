#include <bit>
#include <cstring>

#include "json.hpp"
#include "plcgrid/error.hpp"
#include "plcgrid/nn.hpp"

namespace plcgrid::nn {

namespace {

constexpr char kMagic[8] = {'P', 'L', 'C', 'G', 'N', 'N', '\0', '\x1a'};
constexpr std::uint32_t kVersion = 1;

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(std::string_view in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

std::uint32_t get_u32(std::string_view in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

}  // namespace

std::string serialize_network(Sequential& net, const std::string& metadata_json) {
  nlohmann::json header;
  header["format"] = "plcgrid-nn";
  header["version"] = kVersion;
  header["seed"] = net.seed();
  header["layers"] = nlohmann::json::array();
  for (const auto& s : net.specs()) header["layers"].push_back({{"kind", s.kind}, {"attrs", s.attrs}});
  header["parameters"] = nlohmann::json::array();
  for (auto* p : net.parameters()) header["parameters"].push_back({{"name", p->name}, {"shape", p->value.shape}});
  try {
    header["metadata"] = nlohmann::json::parse(metadata_json);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("network metadata is not JSON: ") + e.what());
  }
  const std::string text = header.dump();

  std::string out(kMagic, sizeof kMagic);
  put_u32(out, kVersion);
  put_u64(out, text.size());
  out += text;
  for (double v : net.flat_parameters()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

StoredNetwork deserialize_network(std::string_view bytes) {
  constexpr std::size_t kFixed = sizeof kMagic + 4 + 8;
  if (bytes.size() < kFixed || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw ParseError("not a plcgrid network file (bad magic)");
  }
  const std::uint32_t version = get_u32(bytes, sizeof kMagic);
  if (version != kVersion) throw ParseError("unsupported network file version " + std::to_string(version));
  const std::uint64_t header_len = get_u64(bytes, sizeof kMagic + 4);
  if (header_len > bytes.size() - kFixed) throw ParseError("network file truncated in header");

  StoredNetwork out;
  try {
    const auto header = nlohmann::json::parse(bytes.substr(kFixed, header_len));
    for (const auto& l : header.at("layers")) {
      LayerSpec s{l.at("kind").get<std::string>(), l.at("attrs").get<std::map<std::string, double>>()};
      out.net.add(make_layer(s));
    }
    const auto params = out.net.parameters();
    const auto& declared = header.at("parameters");
    if (declared.size() != params.size()) throw ParseError("network file: parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (declared[i].at("shape").get<Shape>() != params[i]->value.shape) {
        throw ParseError("network file: shape mismatch for parameter " + std::to_string(i));
      }
    }
    const std::uint64_t seed = header.at("seed").get<std::uint64_t>();
    out.net.initialize(seed);  // records the seed; values are overwritten below
    out.metadata_json = header.at("metadata").dump();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("network file header: ") + e.what());
  }

  const std::size_t count = out.net.parameter_count();
  const std::size_t body = kFixed + header_len;
  if (bytes.size() != body + count * 8) throw ParseError("network file: payload size mismatch");
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) values[i] = std::bit_cast<double>(get_u64(bytes, body + i * 8));
  out.net.set_flat_parameters(values);
  return out;
}

}  // namespace plcgrid::nn
