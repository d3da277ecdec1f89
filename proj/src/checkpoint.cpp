#include "eabn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

namespace eabn {

namespace {

constexpr uint32_t kVersion = 1;

template <typename T>
void put_le(std::ostream& out, T v) {
  unsigned char b[sizeof(T)];
  for (size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<char*>(b), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  unsigned char b[sizeof(T)];
  in.read(reinterpret_cast<char*>(b), sizeof(T));
  T v = 0;
  for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw TensorError("cannot open '" + path + "' for writing");
  out.write("EABN", 4);
  put_le<uint32_t>(out, kVersion);
  put_le<uint64_t>(out, tensors.size());
  for (const auto& t : tensors) {
    put_le<uint32_t>(out, static_cast<uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put_le<uint32_t>(out, static_cast<uint32_t>(t.dims.size()));
    int64_t numel = 1;
    for (int64_t d : t.dims) {
      put_le<uint64_t>(out, static_cast<uint64_t>(d));
      numel *= d;
    }
    if (numel != static_cast<int64_t>(t.data.size()))
      throw TensorError("checkpoint tensor '" + t.name + "': dims do not match payload");
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
  if (!out) throw TensorError("write failed for '" + path + "'");
}

std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TensorError("cannot open '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::strncmp(magic, "EABN", 4) != 0)
    throw TensorError("'" + path + "': not a checkpoint file");
  uint32_t version = get_le<uint32_t>(in);
  if (version != kVersion)
    throw TensorError("'" + path + "': unsupported checkpoint version " +
                      std::to_string(version));
  uint64_t count = get_le<uint64_t>(in);
  std::vector<NamedTensor> tensors;
  tensors.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    NamedTensor t;
    uint32_t name_len = get_le<uint32_t>(in);
    if (!in || name_len > 4096) throw TensorError("'" + path + "': corrupt record header");
    t.name.resize(name_len);
    in.read(t.name.data(), name_len);
    uint32_t rank = get_le<uint32_t>(in);
    if (!in || rank > 8) throw TensorError("'" + path + "': implausible tensor rank");
    int64_t numel = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      int64_t dim = static_cast<int64_t>(get_le<uint64_t>(in));
      t.dims.push_back(dim);
      numel *= dim;
    }
    if (!in || numel < 0 || numel > (int64_t{1} << 30))
      throw TensorError("'" + path + "': implausible tensor size");
    t.data.resize(numel);
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!in) throw TensorError("'" + path + "': truncated tensor '" + t.name + "'");
    tensors.push_back(std::move(t));
  }
  return tensors;
}

std::vector<NamedTensor> collect_named(EabnModel<float>& model, ClassCenters<float>* centers) {
  std::vector<NamedTensor> out;
  model.visit([&](const std::string& name, Tensor<float>& t, bool) {
    out.push_back({name, t.shape(), t.data()});
  });
  if (centers)
    out.push_back({"centers", centers->tensor().shape(), centers->tensor().data()});
  return out;
}

void apply_checkpoint(EabnModel<float>& model, ClassCenters<float>* centers,
                      const std::vector<NamedTensor>& tensors) {
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;

  auto restore = [&](const std::string& name, Tensor<float>& t) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw TensorError("checkpoint is missing tensor '" + name + "'");
    if (it->second->dims != t.shape())
      throw TensorError("checkpoint tensor '" + name + "': shape mismatch");
    t.data() = it->second->data;
    by_name.erase(it);
  };
  model.visit([&](const std::string& name, Tensor<float>& t, bool) { restore(name, t); });
  if (centers) restore("centers", centers->tensor());
  if (!by_name.empty())
    throw TensorError("checkpoint has unexpected tensor '" + by_name.begin()->first + "'");
}

}  // namespace eabn
