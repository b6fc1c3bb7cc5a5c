#include "kerl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "kerl/errors.hpp"
#include "kerl/rng.hpp"

namespace kerl {

namespace {

constexpr char kMagic[8] = {'K', 'E', 'R', 'L', 'C', 'K', 'P', 'T'};
constexpr std::size_t kPreamble = sizeof(kMagic) + 4 + 8;

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

template <typename T>
T get(const std::vector<std::uint8_t>& in, std::size_t at) {
  T v;
  std::memcpy(&v, in.data() + at, sizeof(T));
  return v;
}

std::uint64_t checksum(const std::uint8_t* data, std::size_t n) {
  return fnv1a(std::string_view(reinterpret_cast<const char*>(data), n));
}

struct Parsed {
  nlohmann::json manifest;
  std::size_t payload_offset = 0;
};

Parsed parse(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kPreamble || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("bad magic");
  }
  const auto version = get<std::uint32_t>(bytes, 8);
  if (version != kCheckpointVersion) throw CheckpointError("unsupported format version " + std::to_string(version));
  const auto len = get<std::uint64_t>(bytes, 12);
  if (len > bytes.size() - kPreamble) throw CheckpointError("manifest length exceeds file size");
  Parsed p;
  try {
    p.manifest = nlohmann::json::parse(bytes.begin() + kPreamble, bytes.begin() + static_cast<std::ptrdiff_t>(kPreamble + len));
  } catch (const nlohmann::json::exception& ex) {
    throw CheckpointError(std::string("manifest is not valid JSON: ") + ex.what());
  }
  p.payload_offset = kPreamble + len;
  return p;
}

Config config_from(const nlohmann::json& manifest) {
  try {
    const auto kv = manifest.at("config").get<std::map<std::string, std::string>>();
    Config cfg = Config::from_map(kv);
    if (cfg.hash() != manifest.at("config_hash").get<std::uint64_t>()) throw CheckpointError("config hash differs");
    return cfg;
  } catch (const nlohmann::json::exception& ex) {
    throw CheckpointError(std::string("config section: ") + ex.what());
  } catch (const ConfigError& ex) {
    throw CheckpointError(std::string("config section: ") + ex.what());
  }
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::vector<std::uint8_t> serialize(const KerlModel& model) {
  std::vector<std::uint8_t> payload;
  nlohmann::json arrays = nlohmann::json::array();
  for (const auto& [name, entry] : model.params().entries()) {
    const ad::Matrix& m = entry.var.value();
    arrays.push_back({{"name", name}, {"shape", {m.rows(), m.cols()}}, {"offset", payload.size()}});
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) put(payload, static_cast<float>(m(i, j)));
    }
  }
  nlohmann::json manifest;
  manifest["format_version"] = kCheckpointVersion;
  manifest["stage"] = to_string(model.stage());
  manifest["config"] = model.config().to_map();
  manifest["config_hash"] = model.config().hash();
  manifest["vocab"] = model.vocab().tokens();
  manifest["arrays"] = std::move(arrays);
  manifest["payload_bytes"] = payload.size();
  manifest["checksum"] = checksum(payload.data(), payload.size());
  const std::string text = manifest.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + sizeof(kMagic));
  put(out, kCheckpointVersion);
  put(out, static_cast<std::uint64_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

void save_checkpoint(const KerlModel& model, const std::filesystem::path& path) {
  const auto bytes = serialize(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("short write to " + path.string());
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
  const Parsed p = parse(read_file(path));
  CheckpointHeader h;
  h.config = config_from(p.manifest);
  try {
    h.stage = parse_stage(p.manifest.at("stage").get<std::string>());
    h.vocab = p.manifest.at("vocab").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& ex) {
    throw CheckpointError(ex.what());
  }
  return h;
}

std::unique_ptr<KerlModel> deserialize(const std::vector<std::uint8_t>& bytes,
                                       std::shared_ptr<const KnowledgeGraph> kg, TokenEmbeddingTable table) {
  const Parsed p = parse(bytes);
  const nlohmann::json& m = p.manifest;
  Config cfg = config_from(m);
  std::unique_ptr<KerlModel> model;
  try {
    if (m.at("format_version").get<std::uint32_t>() != kCheckpointVersion) throw CheckpointError("format_version field");
    const auto payload_bytes = m.at("payload_bytes").get<std::size_t>();
    if (bytes.size() - p.payload_offset != payload_bytes) {
      throw CheckpointError("payload is " + std::to_string(bytes.size() - p.payload_offset) + " bytes, manifest says " +
                            std::to_string(payload_bytes));
    }
    if (checksum(bytes.data() + p.payload_offset, payload_bytes) != m.at("checksum").get<std::uint64_t>()) {
      throw CheckpointError("payload checksum");
    }
    model = std::make_unique<KerlModel>(cfg, std::move(kg), std::move(table),
                                        Vocab(m.at("vocab").get<std::vector<std::string>>()));
    model->set_stage(parse_stage(m.at("stage").get<std::string>()));

    const auto& arrays = m.at("arrays");
    const auto& entries = model->params().entries();
    if (arrays.size() != entries.size()) {
      throw CheckpointError("checkpoint has " + std::to_string(arrays.size()) + " arrays, model expects " +
                            std::to_string(entries.size()));
    }
    auto it = entries.begin();
    std::size_t expected_offset = 0;
    for (const auto& a : arrays) {
      const auto name = a.at("name").get<std::string>();
      const auto shape = a.at("shape").get<std::vector<Eigen::Index>>();
      const auto offset = a.at("offset").get<std::size_t>();
      if (name != it->first) throw CheckpointError("array '" + name + "' where '" + it->first + "' was expected");
      ad::Var v = it->second.var;
      if (shape.size() != 2 || shape[0] != v.rows() || shape[1] != v.cols()) {
        throw CheckpointError("shape of '" + name + "'");
      }
      const std::size_t count = static_cast<std::size_t>(v.rows() * v.cols());
      if (offset != expected_offset || offset + count * sizeof(float) > payload_bytes) {
        throw CheckpointError("offset of '" + name + "'");
      }
      ad::Matrix& dst = v.mutable_value();
      std::size_t at = p.payload_offset + offset;
      for (Eigen::Index i = 0; i < dst.rows(); ++i) {
        for (Eigen::Index j = 0; j < dst.cols(); ++j, at += sizeof(float)) {
          dst(i, j) = static_cast<double>(get<float>(bytes, at));
        }
      }
      expected_offset = offset + count * sizeof(float);
      ++it;
    }
    if (expected_offset != payload_bytes) throw CheckpointError("trailing payload bytes");
  } catch (const nlohmann::json::exception& ex) {
    throw CheckpointError(ex.what());
  } catch (const CheckpointError&) {
    throw;
  } catch (const Error& ex) {
    throw CheckpointError(ex.what());
  }
  return model;
}

std::unique_ptr<KerlModel> load_checkpoint(const std::filesystem::path& path,
                                           std::shared_ptr<const KnowledgeGraph> kg, TokenEmbeddingTable table) {
  return deserialize(read_file(path), std::move(kg), std::move(table));
}

}  // namespace kerl
