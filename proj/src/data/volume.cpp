#include "anivol/data/volume.hpp"

#include <bit>
#include <fstream>
#include <json.hpp>
#include <stdexcept>

namespace anivol {

namespace {

static_assert(std::endian::native == std::endian::little, "voxel files are little-endian f64");

using nlohmann::json;

std::runtime_error io_error(const std::filesystem::path& path, const std::string& what) {
  return std::runtime_error(path.string() + ": " + what);
}

template <typename T>
T required(const json& meta, const char* key, const std::filesystem::path& path) {
  if (!meta.contains(key)) throw std::invalid_argument(path.string() + ": sidecar is missing '" + key + "'");
  try {
    return meta.at(key).get<T>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(path.string() + ": sidecar field '" + key + "': " + e.what());
  }
}

}  // namespace

void Volume::validate() const {
  if (depth == 0 || height == 0 || width == 0) throw std::invalid_argument("volume " + id + ": empty dimension");
  if (voxels.size() != depth * height * width) {
    throw std::invalid_argument("volume " + id + ": " + std::to_string(voxels.size()) + " voxels for dims " +
                                std::to_string(width) + "x" + std::to_string(height) + "x" + std::to_string(depth));
  }
  if (label != 0 && label != 1) throw std::invalid_argument("volume " + id + ": label must be 0 or 1");
  if (representative_slices.empty() || representative_slices.size() > 3) {
    throw std::invalid_argument("volume " + id + ": needs 1 to 3 representative slices, has " +
                                std::to_string(representative_slices.size()));
  }
  for (std::size_t s : representative_slices) {
    if (s >= depth) {
      throw std::invalid_argument("volume " + id + ": representative slice " + std::to_string(s) +
                                  " out of range for D=" + std::to_string(depth));
    }
  }
}

std::filesystem::path sidecar_path(const std::filesystem::path& vox) {
  auto meta = vox;
  meta.replace_extension(".meta");
  return meta;
}

void save_volume(const Volume& volume, const std::filesystem::path& vox) {
  volume.validate();
  {
    std::ofstream out(vox, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error(vox, "cannot open for writing");
    out.write(reinterpret_cast<const char*>(volume.voxels.data()),
              static_cast<std::streamsize>(volume.voxels.size() * sizeof(double)));
    if (!out) throw io_error(vox, "write failed");
  }
  json meta;
  meta["id"] = volume.id;
  meta["dims"] = {volume.width, volume.height, volume.depth};
  meta["spacing_mm"] = {volume.spacing_x_mm, volume.spacing_y_mm};
  meta["thickness_mm"] = volume.thickness_mm;
  meta["label"] = volume.label;
  meta["representative_slices"] = volume.representative_slices;
  const auto meta_path = sidecar_path(vox);
  std::ofstream out(meta_path, std::ios::trunc);
  if (!out) throw io_error(meta_path, "cannot open for writing");
  out << meta.dump(2) << '\n';
}

Volume load_volume(const std::filesystem::path& vox) {
  const auto meta_path = sidecar_path(vox);
  std::ifstream meta_in(meta_path);
  if (!meta_in) throw io_error(meta_path, "missing sidecar");
  json meta;
  try {
    meta = json::parse(meta_in);
  } catch (const json::exception& e) {
    throw std::invalid_argument(meta_path.string() + ": " + e.what());
  }

  Volume v;
  v.id = meta.value("id", vox.stem().string());
  const auto dims = required<std::vector<std::size_t>>(meta, "dims", meta_path);
  if (dims.size() != 3) throw std::invalid_argument(meta_path.string() + ": dims must be [W,H,D]");
  v.width = dims[0];
  v.height = dims[1];
  v.depth = dims[2];
  const auto spacing = required<std::vector<double>>(meta, "spacing_mm", meta_path);
  if (spacing.size() != 2) throw std::invalid_argument(meta_path.string() + ": spacing_mm must be [sx,sy]");
  v.spacing_x_mm = spacing[0];
  v.spacing_y_mm = spacing[1];
  v.thickness_mm = required<double>(meta, "thickness_mm", meta_path);
  v.label = required<int>(meta, "label", meta_path);
  v.representative_slices = required<std::vector<std::size_t>>(meta, "representative_slices", meta_path);

  std::ifstream in(vox, std::ios::binary | std::ios::ate);
  if (!in) throw io_error(vox, "cannot open");
  const auto bytes = static_cast<std::size_t>(in.tellg());
  const std::size_t expected = v.width * v.height * v.depth * sizeof(double);
  if (bytes != expected) {
    throw std::invalid_argument(vox.string() + ": " + std::to_string(bytes) + " bytes, dims need " +
                                std::to_string(expected));
  }
  v.voxels.resize(v.width * v.height * v.depth);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(v.voxels.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw io_error(vox, "read failed");
  v.validate();
  return v;
}

void save_dataset(const std::vector<Volume>& volumes, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt", std::ios::trunc);
  if (!manifest) throw io_error(dir / "manifest.txt", "cannot open for writing");
  for (const auto& v : volumes) {
    if (v.id.empty() || v.id.find_first_of("/\\\n") != std::string::npos) {
      throw std::invalid_argument("volume id '" + v.id + "' is not a valid file stem");
    }
    save_volume(v, dir / (v.id + ".vox"));
    manifest << v.id << '\n';
  }
}

std::vector<Volume> load_dataset(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw io_error(dir / "manifest.txt", "missing dataset manifest");
  std::vector<Volume> volumes;
  std::string name;
  while (std::getline(manifest, name)) {
    if (name.empty()) continue;
    volumes.push_back(load_volume(dir / (name + ".vox")));
  }
  if (volumes.empty()) throw std::invalid_argument(dir.string() + ": manifest lists no volumes");
  return volumes;
}

std::vector<int> labels_of(const std::vector<Volume>& volumes) {
  std::vector<int> labels;
  labels.reserve(volumes.size());
  for (const auto& v : volumes) labels.push_back(v.label);
  return labels;
}

}  // namespace anivol
