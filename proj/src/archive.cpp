#include "unicd/archive.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include "unicd/error.hpp"

namespace unicd {

namespace {
constexpr char kMagic[8] = {'U', 'N', 'I', 'C', 'D', 'T', 'A', '1'};

void put_u64(std::string& buf, uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint64_t get_u64(const unsigned char* p) {
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}
}  // namespace

void write_archive(const std::filesystem::path& path, const TensorArchive& a, DType dtype) {
  nlohmann::json header;
  header["meta"] = a.meta;
  header["tensors"] = nlohmann::json::array();
  const size_t elem = dtype == DType::kF32 ? 4 : 8;
  std::string payload;
  for (const auto& [name, t] : a.tensors) {
    const size_t nbytes = static_cast<size_t>(t.numel()) * elem;
    header["tensors"].push_back({{"name", name},
                                 {"dtype", dtype == DType::kF32 ? "f32" : "f64"},
                                 {"shape", t.shape()},
                                 {"offset", payload.size()},
                                 {"nbytes", nbytes}});
    const size_t off = payload.size();
    payload.resize(off + nbytes);
    if (dtype == DType::kF32) {
      for (int64_t i = 0; i < t.numel(); ++i) {
        const float f = static_cast<float>(t[i]);
        std::memcpy(payload.data() + off + static_cast<size_t>(i) * 4, &f, 4);
      }
    } else {
      std::memcpy(payload.data() + off, t.data(), nbytes);
    }
  }
  const std::string hs = header.dump();
  std::string out(kMagic, 8);
  put_u64(out, hs.size());
  out += hs;
  out += payload;

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(ErrorCode::kIoError, "cannot write " + tmp.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw Error(ErrorCode::kIoError, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::kIoError, "rename to " + path.string() + ": " + ec.message());
}

TensorArchive read_archive(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw Error(ErrorCode::kCorruptImage, path.string() + ": not a tensor archive");
  const uint64_t hlen = get_u64(bytes.data() + 8);
  if (16 + hlen > bytes.size()) throw Error(ErrorCode::kCorruptImage, path.string() + ": truncated header");

  TensorArchive a;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kCorruptImage, path.string() + ": bad header: " + e.what());
  }
  a.meta = header.value("meta", nlohmann::json::object());
  const unsigned char* data = bytes.data() + 16 + hlen;
  const size_t data_len = bytes.size() - 16 - hlen;
  for (const auto& e : header.at("tensors")) {
    const Shape shape = e.at("shape").get<Shape>();
    const std::string dt = e.at("dtype").get<std::string>();
    const size_t off = e.at("offset").get<size_t>();
    const size_t n = static_cast<size_t>(shape_numel(shape));
    const size_t elem = dt == "f32" ? 4 : 8;
    if (dt != "f32" && dt != "f64") throw Error(ErrorCode::kCorruptImage, "unknown dtype " + dt);
    if (off + n * elem > data_len) throw Error(ErrorCode::kCorruptImage, path.string() + ": truncated payload");
    std::vector<double> vals(n);
    if (elem == 4) {
      for (size_t i = 0; i < n; ++i) {
        float v;
        std::memcpy(&v, data + off + i * 4, 4);
        vals[i] = v;
      }
    } else {
      std::memcpy(vals.data(), data + off, n * 8);
    }
    a.tensors.emplace(e.at("name").get<std::string>(), Tensor(shape, std::move(vals)));
  }
  return a;
}

}  // namespace unicd
