#include "dfmtl/archive.hpp"

#include <cstdint>
#include <fstream>

namespace fs = std::filesystem;

namespace dfmtl {

namespace {

constexpr char kMagic[8] = {'D', 'F', 'M', 'T', 'L', 'C', 'K', '1'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in, const fs::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
    throw IngestionError("truncated checkpoint '" + path.string() + "'");
  return v;
}

}  // namespace

const VecR& Archive::array(const std::string& name) const {
  auto it = arrays.find(name);
  if (it == arrays.end()) throw IngestionError("checkpoint has no array '" + name + "'");
  return it->second;
}

void Archive::save(const fs::path& path) const {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IngestionError("cannot write checkpoint '" + tmp.string() + "'");
    out.write(kMagic, sizeof kMagic);
    const std::string text = meta.dump();
    put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    put<std::uint64_t>(out, arrays.size());
    for (const auto& [name, values] : arrays) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      put<std::uint64_t>(out, static_cast<std::uint64_t>(values.size()));
      out.write(reinterpret_cast<const char*>(values.data()),
                static_cast<std::streamsize>(values.size() * sizeof(double)));
    }
    if (!out) throw IngestionError("failed writing checkpoint '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

Archive Archive::load(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open checkpoint '" + path.string() + "'");
  char magic[sizeof kMagic];
  if (!in.read(magic, sizeof magic) || !std::equal(magic, magic + sizeof magic, kMagic))
    throw IngestionError("'" + path.string() + "' is not a checkpoint archive");
  Archive a;
  const auto meta_len = get<std::uint64_t>(in, path);
  std::string text(meta_len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(meta_len)))
    throw IngestionError("truncated checkpoint '" + path.string() + "'");
  try {
    a.meta = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError("corrupt checkpoint metadata: " + std::string(e.what()));
  }
  const auto n = get<std::uint64_t>(in, path);
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto name_len = get<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw IngestionError("truncated checkpoint '" + path.string() + "'");
    const auto count = get<std::uint64_t>(in, path);
    VecR v(static_cast<Eigen::Index>(count));
    if (!in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * sizeof(double))))
      throw IngestionError("truncated checkpoint '" + path.string() + "'");
    a.arrays.emplace(std::move(name), std::move(v));
  }
  return a;
}

}  // namespace dfmtl
