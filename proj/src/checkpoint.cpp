#include "fargan/checkpoint.hpp"

#include <fstream>
#include <iterator>

namespace fargan {

namespace {

constexpr char kMagic[4] = {'F', 'A', 'R', 'G'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t offset() const { return pos_; }

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(pos_, std::string("truncated container while reading ") + what);
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes_[pos_++];
  }
  std::vector<std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    std::vector<std::uint8_t> out(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return out;
  }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::size_t dtype_size(DType t) { return t == DType::f32 ? 4 : 8; }

}  // namespace

std::size_t Record::element_count() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::vector<double> Record::as_doubles() const {
  const std::size_t n = element_count();
  std::vector<double> out(n);
  if (dtype == DType::f32) {
    for (std::size_t i = 0; i < n; ++i) {
      float v;
      std::memcpy(&v, bytes.data() + 4 * i, 4);
      out[i] = v;
    }
  } else {
    std::memcpy(out.data(), bytes.data(), 8 * n);
  }
  return out;
}

Record make_scalar_record(const std::string& name, double value) {
  return make_record(name, Tensor<double>::scalar(value));
}

std::vector<std::uint8_t> encode_container(const std::vector<Record>& records) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kContainerVersion);
  for (const auto& r : records) {
    if (r.bytes.size() != r.element_count() * dtype_size(r.dtype)) {
      throw std::invalid_argument("record '" + r.name + "' payload does not match its dims");
    }
    put_u32(out, static_cast<std::uint32_t>(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    out.push_back(static_cast<std::uint8_t>(r.dtype));
    put_u32(out, static_cast<std::uint32_t>(r.dims.size()));
    for (auto d : r.dims) put_u32(out, d);
    out.insert(out.end(), r.bytes.begin(), r.bytes.end());
  }
  return out;
}

std::vector<Record> decode_container(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes);
  in.need(4, "magic");
  const auto magic = in.take(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), std::begin(kMagic))) throw FormatError(0, "bad magic, expected FARG");
  const std::size_t version_at = in.offset();
  const std::uint32_t version = in.u32("version");
  if (version != kContainerVersion) {
    throw FormatError(version_at, "unsupported format version " + std::to_string(version));
  }
  std::vector<Record> records;
  while (!in.done()) {
    Record r;
    const std::uint32_t name_len = in.u32("name length");
    const auto name = in.take(name_len, "name");
    r.name.assign(name.begin(), name.end());
    const std::size_t dtype_at = in.offset();
    const std::uint8_t dtype = in.u8("dtype");
    if (dtype > 1) throw FormatError(dtype_at, "unknown dtype tag " + std::to_string(dtype));
    r.dtype = static_cast<DType>(dtype);
    const std::uint32_t rank = in.u32("rank");
    in.need(static_cast<std::size_t>(rank) * 4, "dims");
    for (std::uint32_t i = 0; i < rank; ++i) r.dims.push_back(in.u32("dims"));
    const std::size_t payload = r.element_count() * dtype_size(r.dtype);
    r.bytes = in.take(payload, "elements");
    records.push_back(std::move(r));
  }
  return records;
}

void write_container(const std::filesystem::path& path, const std::vector<Record>& records) {
  const std::vector<std::uint8_t> bytes = encode_container(records);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot create " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<Record> read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_container(bytes);
}

}  // namespace fargan
