#include "mmtfd/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include "mmtfd/errors.hpp"

namespace mmtfd {

namespace {

constexpr char kMagic[4] = {'M', 'M', 'T', 'F'};

class Writer {
 public:
  template <class T>
  void uint(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const std::string& s) { out_ += s; }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}

  template <class T>
  T uint() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<T>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return v;
  }
  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw ContractError("checkpoint: truncated file");
  }
  const std::string& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ck) {
  Writer w;
  w.bytes(std::string(kMagic, 4));
  w.uint<std::uint32_t>(ck.version);
  w.uint<std::uint64_t>(ck.params.size());
  for (const auto& [name, t] : ck.params) {
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.uint<std::uint64_t>(d);
    for (double v : t.data()) w.f64(v);
  }
  w.uint<std::uint64_t>(ck.step);
  w.uint<std::uint8_t>(ck.norm.mode == NormMode::global ? 0 : 1);
  w.f64(ck.norm.mean);
  w.f64(ck.norm.stdev);
  w.uint<std::uint8_t>(ck.norm.std_substituted ? 1 : 0);
  w.uint<std::uint64_t>(ck.config_json.size());
  w.bytes(ck.config_json);
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.bytes(4) != std::string(kMagic, 4)) throw ContractError("checkpoint: bad magic");
  Checkpoint ck;
  ck.version = r.uint<std::uint32_t>();
  if (ck.version != kCheckpointVersion) {
    throw ContractError("checkpoint: unsupported version " + std::to_string(ck.version));
  }
  const auto count = r.uint<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.bytes(r.uint<std::uint32_t>());
    const auto rank = r.uint<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = r.uint<std::uint64_t>();
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = r.f64();
    ck.params.emplace(std::move(name), Tensor::from(std::move(shape), std::move(values), true));
  }
  ck.step = r.uint<std::uint64_t>();
  ck.norm.mode = r.uint<std::uint8_t>() == 0 ? NormMode::global : NormMode::per_window;
  ck.norm.mean = r.f64();
  ck.norm.stdev = r.f64();
  ck.norm.std_substituted = r.uint<std::uint8_t>() != 0;
  ck.config_json = r.bytes(r.uint<std::uint64_t>());
  if (!r.done()) throw ContractError("checkpoint: trailing bytes");
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& file) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw CapacityError("cannot write checkpoint " + file.string());
  const std::string bytes = serialize_checkpoint(ck);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw CapacityError("cannot open checkpoint " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace mmtfd
