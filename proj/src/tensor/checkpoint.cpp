#include "anivol/tensor/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <map>
#include <stdexcept>

namespace anivol {

namespace {

constexpr std::array<char, 8> kMagic{'A', 'N', 'I', 'V', 'O', 'L', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

enum class RecordKind : std::uint8_t { parameter = 0, buffer = 1 };

template <typename T>
T to_little_endian(T value) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return value;
}

template <typename T>
void write_le(std::ostream& os, T value) {
  value = to_little_endian(value);
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  T value{};
  if (!is.read(reinterpret_cast<char*>(&value), sizeof(T))) throw std::runtime_error("checkpoint truncated");
  return to_little_endian(value);
}

void write_record(std::ostream& os, const std::string& name, RecordKind kind, const Tensor& t) {
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_le<std::uint8_t>(os, static_cast<std::uint8_t>(kind));
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (auto extent : t.shape()) write_le<std::uint64_t>(os, extent);
  for (double v : t.values()) write_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
}

}  // namespace

std::filesystem::path manifest_path(const std::filesystem::path& archive) {
  return std::filesystem::path(archive.string() + ".manifest");
}

void save_checkpoint(const std::filesystem::path& archive, const StateList& state, const std::string& variant) {
  std::ofstream os(archive, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write checkpoint " + archive.string());
  os.write(kMagic.data(), kMagic.size());
  write_le<std::uint32_t>(os, kVersion);
  const auto records = state.parameters().size() + state.buffers().size();
  write_le<std::uint64_t>(os, records);
  for (const auto& p : state.parameters()) write_record(os, p.name, RecordKind::parameter, p.tensor.value());
  for (const auto& b : state.buffers()) write_record(os, b.name, RecordKind::buffer, b.tensor.value());
  if (!os) throw std::runtime_error("failed writing checkpoint " + archive.string());

  nlohmann::ordered_json manifest;
  manifest["format"] = "anivol-checkpoint";
  manifest["version"] = kVersion;
  manifest["variant"] = variant;
  manifest["parameter_count"] = state.parameter_count();
  manifest["record_count"] = records;
  std::ofstream ms(manifest_path(archive), std::ios::trunc);
  if (!ms) throw std::runtime_error("cannot write manifest for " + archive.string());
  ms << manifest.dump(2) << '\n';
}

void load_checkpoint(const std::filesystem::path& archive, StateList& state) {
  std::ifstream is(archive, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + archive.string());
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) {
    throw std::runtime_error(archive.string() + " is not a checkpoint archive");
  }
  if (read_le<std::uint32_t>(is) != kVersion) throw std::runtime_error("unsupported checkpoint version");
  const auto records = read_le<std::uint64_t>(is);

  std::map<std::string, std::pair<RecordKind, Tensor>> loaded;
  for (std::uint64_t r = 0; r < records; ++r) {
    const auto name_len = read_le<std::uint32_t>(is);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw std::runtime_error("checkpoint truncated");
    const auto kind = static_cast<RecordKind>(read_le<std::uint8_t>(is));
    const auto rank = read_le<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& extent : shape) extent = read_le<std::uint64_t>(is);
    std::vector<double> values(numel(shape));
    for (auto& v : values) v = std::bit_cast<double>(read_le<std::uint64_t>(is));
    if (!loaded.emplace(name, std::pair{kind, Tensor(shape, std::move(values))}).second) {
      throw std::runtime_error("duplicate record '" + name + "' in checkpoint");
    }
  }

  auto restore = [&](const std::string& name, RecordKind kind, Var& target) {
    auto it = loaded.find(name);
    if (it == loaded.end()) throw std::runtime_error("checkpoint has no record '" + name + "'");
    if (it->second.first != kind) throw std::runtime_error("record '" + name + "' has the wrong kind");
    if (it->second.second.shape() != target.shape()) {
      throw std::runtime_error("record '" + name + "' has shape " + to_string(it->second.second.shape()) +
                               ", model expects " + to_string(target.shape()));
    }
    target.mutable_value() = std::move(it->second.second);
    loaded.erase(it);
  };
  for (auto& p : state.parameters()) restore(p.name, RecordKind::parameter, p.tensor);
  for (auto& b : state.buffers()) restore(b.name, RecordKind::buffer, b.tensor);
  if (!loaded.empty()) throw std::runtime_error("checkpoint record '" + loaded.begin()->first + "' is not in the model");
}

CheckpointManifest read_manifest(const std::filesystem::path& archive) {
  std::ifstream is(manifest_path(archive));
  if (!is) throw std::runtime_error("cannot open manifest for " + archive.string());
  const auto j = nlohmann::json::parse(is);
  return CheckpointManifest{j.at("variant").get<std::string>(), j.at("parameter_count").get<std::size_t>(),
                            j.at("record_count").get<std::size_t>()};
}

}  // namespace anivol
