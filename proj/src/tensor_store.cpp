#include "partyvec/tensor_store.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "partyvec/error.hpp"

namespace partyvec {

using ojson = nlohmann::ordered_json;

void TensorStore::insert(const std::string& name, Tensor tensor) {
  if (entries_.contains(name)) fail(ErrorCode::DuplicateName, "tensor '" + name + "' already present");
  entries_.emplace(name, tensor.renamed(name));
}

void TensorStore::insert_or_assign(const std::string& name, Tensor tensor) {
  entries_.insert_or_assign(name, tensor.renamed(name));
}

const Tensor& TensorStore::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) fail(ErrorCode::MissingTensor, "no tensor named '" + name + "'");
  return it->second;
}

std::vector<std::string> TensorStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

std::map<std::string, TensorInfo> TensorStore::manifest() const {
  std::map<std::string, TensorInfo> out;
  std::uint64_t offset = 0;
  for (const auto& [name, t] : entries_) {
    const std::uint64_t bytes = 4ULL * t.numel();
    out[name] = TensorInfo{t.shape(), offset, offset + bytes};
    offset += bytes;
  }
  return out;
}

namespace {

void put_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64_le(std::span<const std::uint8_t> in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

void put_f32_le(std::vector<std::uint8_t>& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

float get_f32_le(const std::uint8_t* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

}  // namespace

std::vector<std::uint8_t> TensorStore::serialize() const {
  ojson header = ojson::object();
  const auto info = manifest();
  for (const auto& [name, meta] : info) {
    ojson entry;
    entry["dtype"] = "F32";
    entry["shape"] = meta.shape;
    entry["data_offsets"] = {meta.begin, meta.end};
    header[name] = std::move(entry);
  }
  const std::string text = header.dump();
  std::vector<std::uint8_t> out;
  std::uint64_t payload = 0;
  for (const auto& [_, meta] : info) payload = std::max(payload, meta.end);
  out.reserve(8 + text.size() + payload);
  put_u64_le(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& [_, t] : entries_) {
    for (float f : t.data()) put_f32_le(out, f);
  }
  return out;
}

TensorStore TensorStore::parse(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8) fail(ErrorCode::MalformedHeader, "container shorter than the 8-byte length prefix");
  const std::uint64_t header_len = get_u64_le(bytes.first(8));
  if (header_len > bytes.size() - 8) {
    fail(ErrorCode::MalformedHeader, "header length " + std::to_string(header_len) + " exceeds file size");
  }
  const auto header_bytes = bytes.subspan(8, header_len);
  const auto payload = bytes.subspan(8 + header_len);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_bytes.begin(), header_bytes.end());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedHeader, std::string("header is not valid JSON: ") + e.what());
  }
  if (!header.is_object()) fail(ErrorCode::MalformedHeader, "header is not a JSON object");

  struct Pending {
    std::string name;
    TensorInfo info;
  };
  std::vector<Pending> pending;
  for (const auto& [name, entry] : header.items()) {
    if (name == "__metadata__") continue;
    if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("shape") ||
        !entry.contains("data_offsets")) {
      fail(ErrorCode::MalformedHeader, "entry '" + name + "' lacks dtype/shape/data_offsets");
    }
    if (!entry["dtype"].is_string() || entry["dtype"].get<std::string>() != "F32") {
      fail(ErrorCode::MalformedHeader, "entry '" + name + "' has unsupported dtype " + entry["dtype"].dump());
    }
    TensorInfo info;
    try {
      info.shape = entry["shape"].get<std::vector<std::size_t>>();
      const auto offsets = entry["data_offsets"].get<std::vector<std::uint64_t>>();
      if (offsets.size() != 2) throw std::runtime_error("data_offsets must have two entries");
      info.begin = offsets[0];
      info.end = offsets[1];
    } catch (const std::exception& e) {
      fail(ErrorCode::MalformedHeader, "entry '" + name + "': " + e.what());
    }
    if (info.end < info.begin || info.end - info.begin != 4ULL * shape_numel(info.shape)) {
      fail(ErrorCode::MalformedHeader, "entry '" + name + "' offsets disagree with its shape");
    }
    pending.push_back({name, std::move(info)});
  }

  std::sort(pending.begin(), pending.end(),
            [](const Pending& a, const Pending& b) { return a.info.begin < b.info.begin; });
  std::uint64_t cursor = 0;
  for (const auto& p : pending) {
    if (p.info.begin < cursor) fail(ErrorCode::OffsetOverlap, "tensor '" + p.name + "' overlaps its predecessor");
    if (p.info.begin > cursor) fail(ErrorCode::MalformedHeader, "gap in payload before tensor '" + p.name + "'");
    cursor = p.info.end;
  }
  if (payload.size() < cursor) {
    fail(ErrorCode::TruncatedPayload,
         "payload has " + std::to_string(payload.size()) + " bytes, header needs " + std::to_string(cursor));
  }
  if (payload.size() > cursor) fail(ErrorCode::MalformedHeader, "trailing bytes after last tensor");

  TensorStore store;
  for (const auto& p : pending) {
    const std::size_t n = shape_numel(p.info.shape);
    std::vector<float> data(n);
    const std::uint8_t* base = payload.data() + p.info.begin;
    for (std::size_t i = 0; i < n; ++i) data[i] = get_f32_le(base + 4 * i);
    store.insert(p.name, Tensor(p.info.shape, std::move(data), p.name));
  }
  return store;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::IoError, "short write to " + path.string());
}

void store_write(const TensorStore& store, const std::filesystem::path& path) {
  write_file_bytes(path, store.serialize());
}

TensorStore store_read(const std::filesystem::path& path) { return TensorStore::parse(read_file_bytes(path)); }

}  // namespace partyvec
