#include "bifrn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "bifrn/errors.hpp"

namespace bifrn {

namespace {

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return value;
  }

  std::vector<std::uint8_t> take(std::size_t n) {
    need(n);
    std::vector<std::uint8_t> out(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return out;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw IoError("checkpoint truncated at byte " + std::to_string(pos_));
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::size_t dtype_size(DType t) { return t == DType::f32 ? 4 : 8; }

}  // namespace

template <typename T>
CheckpointRecord CheckpointRecord::from_tensor(std::string name, const Tensor<T>& t) {
  CheckpointRecord rec;
  rec.name = std::move(name);
  rec.dtype = sizeof(T) == 4 ? DType::f32 : DType::f64;
  rec.shape = t.shape();
  rec.payload.reserve(t.numel() * sizeof(T));
  for (T v : t.values()) {
    if constexpr (sizeof(T) == 4) {
      put_le(rec.payload, std::bit_cast<std::uint32_t>(v));
    } else {
      put_le(rec.payload, std::bit_cast<std::uint64_t>(v));
    }
  }
  return rec;
}

template <typename T>
Tensor<T> CheckpointRecord::to_tensor() const {
  const std::size_t n = shape_numel(shape);
  std::vector<T> values(n);
  Reader in(payload);
  for (std::size_t i = 0; i < n; ++i) {
    if (dtype == DType::f32) {
      values[i] = static_cast<T>(std::bit_cast<float>(in.get<std::uint32_t>()));
    } else {
      values[i] = static_cast<T>(std::bit_cast<double>(in.get<std::uint64_t>()));
    }
  }
  return Tensor<T>(shape, std::move(values));
}

void Checkpoint::add(CheckpointRecord record) {
  if (record.payload.size() != shape_numel(record.shape) * dtype_size(record.dtype)) {
    throw IoError("checkpoint record '" + record.name + "' payload does not match its shape");
  }
  records_.push_back(std::move(record));
}

const CheckpointRecord* Checkpoint::find(const std::string& name) const {
  for (const auto& r : records_) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

std::vector<std::uint8_t> Checkpoint::serialize() const {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  out.push_back(kVersion);
  put_le(out, static_cast<std::uint32_t>(records_.size()));
  for (const auto& r : records_) {
    put_le(out, static_cast<std::uint32_t>(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    out.push_back(static_cast<std::uint8_t>(r.dtype));
    put_le(out, static_cast<std::uint32_t>(r.shape.size()));
    for (std::size_t e : r.shape) put_le(out, static_cast<std::uint64_t>(e));
    out.insert(out.end(), r.payload.begin(), r.payload.end());
  }
  return out;
}

Checkpoint Checkpoint::parse(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes);
  auto magic = in.take(sizeof(kMagic));
  if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) throw IoError("not a checkpoint file (bad magic)");
  const auto version = in.get<std::uint8_t>();
  if (version != kVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  const auto count = in.get<std::uint32_t>();
  Checkpoint ck;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointRecord rec;
    const auto len = in.get<std::uint32_t>();
    auto name = in.take(len);
    rec.name.assign(name.begin(), name.end());
    const auto tag = in.get<std::uint8_t>();
    if (tag != 1 && tag != 2) throw IoError("record '" + rec.name + "' has unknown dtype tag " + std::to_string(tag));
    rec.dtype = static_cast<DType>(tag);
    const auto rank = in.get<std::uint32_t>();
    if (rank == 0) throw IoError("record '" + rec.name + "' has rank 0");
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto e = in.get<std::uint64_t>();
      if (e == 0) throw IoError("record '" + rec.name + "' has a zero extent");
      rec.shape.push_back(static_cast<std::size_t>(e));
    }
    rec.payload = in.take(shape_numel(rec.shape) * dtype_size(rec.dtype));
    ck.records_.push_back(std::move(rec));
  }
  if (!in.done()) throw IoError("trailing bytes after last checkpoint record");
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const auto bytes = serialize();
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse(bytes);
}

template CheckpointRecord CheckpointRecord::from_tensor<float>(std::string, const Tensor<float>&);
template CheckpointRecord CheckpointRecord::from_tensor<double>(std::string, const Tensor<double>&);
template Tensor<float> CheckpointRecord::to_tensor<float>() const;
template Tensor<double> CheckpointRecord::to_tensor<double>() const;

}  // namespace bifrn
