#include "ace/tensor/container.hpp"

#include <bit>
#include <cstring>
#include <map>

#include "ace/data/io.hpp"

ACE_NAMESPACE_BEGIN

namespace {

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("checkpoint truncated while reading ") + what, bytes_.size());
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_container(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::string out(kContainerMagic, sizeof(kContainerMagic));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const NamedTensor& t : tensors) {
    if (t.name.size() > 0xffff) throw std::invalid_argument("write_container: tensor name too long");
    if (t.shape.size() > 0xff) throw std::invalid_argument("write_container: rank too large");
    if (shape_numel(t.shape) != t.values.size()) throw std::invalid_argument("write_container: size mismatch for " + t.name);
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
    out += t.name;
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.shape.size()));
    for (std::size_t d : t.shape) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (float v : t.values) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  data::write_text_file(path, out);
}

std::vector<NamedTensor> read_container(const std::filesystem::path& path) {
  const std::string bytes = data::read_text_file(path);
  Reader in(bytes);
  const std::string magic = in.take(sizeof(kContainerMagic), "magic");
  if (std::memcmp(magic.data(), kContainerMagic, sizeof(kContainerMagic)) != 0) {
    throw FormatError("bad checkpoint magic or version in " + path.string(), 0);
  }
  const auto count = in.get<std::uint32_t>("tensor count");
  std::vector<NamedTensor> out;
  for (std::uint32_t t = 0; t < count; ++t) {
    NamedTensor nt;
    const auto name_len = in.get<std::uint16_t>("name length");
    nt.name = in.take(name_len, "name");
    const auto rank = in.get<std::uint8_t>("rank");
    for (std::uint8_t r = 0; r < rank; ++r) nt.shape.push_back(in.get<std::uint32_t>("dims"));
    const std::size_t n = shape_numel(nt.shape);
    nt.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) nt.values[i] = std::bit_cast<float>(in.get<std::uint32_t>("payload"));
    out.push_back(std::move(nt));
  }
  if (!in.done()) throw FormatError("trailing bytes after checkpoint payload", in.pos());
  return out;
}

std::vector<NamedTensor> export_parameters(const ParameterStore& store, const std::string& prefix) {
  std::vector<NamedTensor> out;
  for (const auto& e : store.entries()) {
    NamedTensor nt;
    nt.name = prefix + e.name;
    nt.shape = e.value.shape();
    nt.values.assign(e.value.data().begin(), e.value.data().end());
    out.push_back(std::move(nt));
  }
  return out;
}

void import_parameters(const std::vector<NamedTensor>& tensors, ParameterStore& store, const std::string& prefix) {
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  for (auto& e : store.entries()) {
    auto it = by_name.find(prefix + e.name);
    if (it == by_name.end()) throw std::invalid_argument("checkpoint is missing tensor " + prefix + e.name);
    if (it->second->shape != e.value.shape()) {
      throw std::invalid_argument("checkpoint tensor " + prefix + e.name + " has shape " + shape_string(it->second->shape) +
                                  ", model expects " + shape_string(e.value.shape()));
    }
    auto dst = e.value.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<Real>(it->second->values[i]);
  }
}

ACE_NAMESPACE_END
