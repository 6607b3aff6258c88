#include "pfdfl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <map>

#include "pfdfl/config.hpp"
#include "pfdfl/errors.hpp"
#include "pfdfl/io.hpp"

namespace pfdfl {

namespace {

constexpr char kMagic[4] = {'P', 'F', 'D', 'L'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  explicit Reader(const std::string& b) : b_(b) {}

  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::string& b_;
  std::size_t pos_ = 0;
};

struct Entry {
  Shape shape;
  std::uint64_t offset = 0;
};

struct Parsed {
  std::string config;
  std::vector<std::pair<std::string, Entry>> entries;
  std::size_t payload_start = 0;
};

Parsed parse(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("not a checkpoint: bad magic");
  Reader r(bytes);
  r.u32();  // magic
  Parsed p;
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  p.config = r.str();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    Entry e;
    const std::uint32_t rank = r.u32();
    for (std::uint32_t d = 0; d < rank; ++d) e.shape.push_back(static_cast<std::size_t>(r.u64()));
    e.offset = r.u64();
    p.entries.emplace_back(std::move(name), std::move(e));
  }
  p.payload_start = r.pos();
  for (const auto& [name, e] : p.entries) {
    const std::size_t bytes_needed = shape_size(e.shape) * 8;
    if (e.offset > bytes.size() - p.payload_start || bytes.size() - p.payload_start - e.offset < bytes_needed) {
      throw FormatError("checkpoint payload truncated for tensor '" + name + "'");
    }
  }
  return p;
}

void fill(const Parsed& p, const std::string& bytes, const ParamList& params) {
  std::map<std::string, const Entry*> index;
  for (const auto& [name, e] : p.entries) index[name] = &e;
  for (const NamedTensor& nt : params) {
    auto it = index.find(nt.name);
    if (it == index.end()) throw LoadError("tensor '" + nt.name + "' missing from checkpoint");
    if (it->second->shape != nt.tensor.shape()) {
      throw LoadError("tensor '" + nt.name + "' has shape " + shape_string(it->second->shape) + " in checkpoint, model expects " +
                      shape_string(nt.tensor.shape()));
    }
    Tensor t = nt.tensor;
    auto data = t.data();
    const std::size_t base = p.payload_start + it->second->offset;
    for (std::size_t i = 0; i < data.size(); ++i) {
      std::uint64_t u = 0;
      for (int b = 0; b < 8; ++b) u |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[base + 8 * i + b])) << (8 * b);
      data[i] = std::bit_cast<double>(u);
    }
  }
}

}  // namespace

std::string serialize_checkpoint(const DualModel& model) {
  const ParamList params = model.parameters();
  std::string out(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_str(out, to_json(model.config()).dump());
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  std::uint64_t offset = 0;
  for (const NamedTensor& nt : params) {
    put_str(out, nt.name);
    put_u32(out, static_cast<std::uint32_t>(nt.tensor.rank()));
    for (std::size_t d : nt.tensor.shape()) put_u64(out, d);
    put_u64(out, offset);
    offset += 8 * nt.tensor.size();
  }
  for (const NamedTensor& nt : params) {
    for (double v : nt.tensor.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

void save_checkpoint(const DualModel& model, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(model));
}

DualModel deserialize_checkpoint(const std::string& bytes) {
  const Parsed p = parse(bytes);
  ModelConfig cfg;
  try {
    cfg = model_config_from_json(Json::parse(p.config));
  } catch (const Json::exception& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  } catch (const ParseError& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }
  DualModel model(cfg);
  fill(p, bytes, model.parameters());
  return model;
}

DualModel load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file(path)); }

void load_checkpoint_into(DualModel& model, const std::string& bytes) { fill(parse(bytes), bytes, model.parameters()); }

void load_checkpoint_into(DualModel& model, const std::filesystem::path& path) {
  load_checkpoint_into(model, read_file(path));
}

}  // namespace pfdfl
