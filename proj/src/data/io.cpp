#include "ace/data/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

ACE_NAMESPACE_BEGIN
namespace data {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& in, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  return v;
}

}  // namespace

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void write_embeddings(const std::filesystem::path& path, const Matrix& matrix) {
  if (matrix.cols == 0) throw std::invalid_argument("write_embeddings: dim must be positive");
  std::string bytes(kEmbeddingMagic, sizeof(kEmbeddingMagic));
  put_u32(bytes, static_cast<std::uint32_t>(matrix.rows));
  put_u32(bytes, static_cast<std::uint32_t>(matrix.cols));
  bytes.reserve(bytes.size() + matrix.values.size() * 4);
  for (float v : matrix.values) put_u32(bytes, std::bit_cast<std::uint32_t>(v));
  write_text_file(path, bytes);
}

Matrix read_embeddings(const std::filesystem::path& path, std::optional<std::size_t> expected_dim) {
  const std::string bytes = read_text_file(path);
  if (bytes.size() < sizeof(kEmbeddingMagic)) throw FormatError("embedding file truncated inside magic", bytes.size());
  if (std::memcmp(bytes.data(), kEmbeddingMagic, sizeof(kEmbeddingMagic)) != 0) {
    throw FormatError("bad embedding magic in " + path.string(), 0);
  }
  if (bytes.size() < kEmbeddingHeaderBytes) throw FormatError("embedding file truncated inside header", bytes.size());
  const std::uint32_t count = get_u32(bytes, 8);
  const std::uint32_t dim = get_u32(bytes, 12);
  if (dim == 0) throw FormatError("embedding dim is zero", 12);
  if (expected_dim && *expected_dim != dim) {
    throw FormatError("embedding dim " + std::to_string(dim) + " does not match expected " + std::to_string(*expected_dim),
                      12);
  }
  const std::uint64_t payload = static_cast<std::uint64_t>(count) * dim * 4;
  const std::uint64_t expected_size = kEmbeddingHeaderBytes + payload;
  if (bytes.size() < expected_size) {
    throw FormatError("embedding payload truncated: expected " + std::to_string(expected_size) + " bytes, found " +
                          std::to_string(bytes.size()),
                      bytes.size());
  }
  if (bytes.size() > expected_size) throw FormatError("trailing bytes after embedding payload", expected_size);
  Matrix m(count, dim);
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    m.values[i] = std::bit_cast<float>(get_u32(bytes, kEmbeddingHeaderBytes + 4 * i));
  }
  return m;
}

void write_queries(const std::filesystem::path& path, const std::vector<QueryRecord>& records) {
  std::string out;
  for (const QueryRecord& r : records) {
    nlohmann::ordered_json line;
    line["query_id"] = r.query_id;
    line["item_id"] = r.item_id;
    line["split"] = split_name(r.split);
    line["tokens"] = r.tokens;
    out += line.dump();
    out += '\n';
  }
  write_text_file(path, out);
}

std::vector<QueryRecord> read_queries(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  std::vector<QueryRecord> records;
  std::size_t offset = 0;
  while (offset < text.size()) {
    std::size_t end = text.find('\n', offset);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(offset, end - offset);
    if (!line.empty()) {
      try {
        const auto j = nlohmann::json::parse(line);
        QueryRecord r;
        r.query_id = j.at("query_id").get<int>();
        r.item_id = j.at("item_id").get<int>();
        r.split = parse_split(j.at("split").get<std::string>());
        r.tokens = j.at("tokens").get<std::vector<int>>();
        if (r.tokens.empty()) throw std::invalid_argument("empty token list");
        records.push_back(std::move(r));
      } catch (const std::exception& e) {
        throw FormatError("bad query record in " + path.string() + ": " + e.what(), offset);
      }
    }
    offset = end + 1;
  }
  return records;
}

}  // namespace data
ACE_NAMESPACE_END
