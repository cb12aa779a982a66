#include "rhythm/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "rhythm/error.hpp"

namespace rhythm::io {
namespace {

constexpr char kMagic[4] = {'R', 'M', 'T', 'C'};

template <class U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <class U>
  U le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }

  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (n > bytes_.size() - pos_) throw IoError("container truncated");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void Container::put(std::string name, Tensor value) {
  if (Entry* e = find(name)) {
    e->payload = std::move(value);
    return;
  }
  entries_.push_back({std::move(name), std::move(value)});
}

void Container::put_text(std::string name, std::string text) {
  if (Entry* e = find(name)) {
    e->payload = std::move(text);
    return;
  }
  entries_.push_back({std::move(name), std::move(text)});
}

bool Container::contains(const std::string& name) const { return find(name) != nullptr; }

const Tensor& Container::tensor(const std::string& name) const {
  const Entry* e = find(name);
  if (!e || !std::holds_alternative<Tensor>(e->payload)) {
    throw IoError("container has no tensor entry '" + name + "'");
  }
  return std::get<Tensor>(e->payload);
}

const std::string& Container::text(const std::string& name) const {
  const Entry* e = find(name);
  if (!e || !std::holds_alternative<std::string>(e->payload)) {
    throw IoError("container has no text entry '" + name + "'");
  }
  return std::get<std::string>(e->payload);
}

Container::Entry* Container::find(const std::string& name) {
  for (auto& e : entries_)
    if (e.name == name) return &e;
  return nullptr;
}

const Container::Entry* Container::find(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return &e;
  return nullptr;
}

std::vector<std::uint8_t> encode(const Container& c) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le<std::uint32_t>(out, kContainerVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.entries().size()));
  for (const auto& e : c.entries()) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    if (const auto* text = std::get_if<std::string>(&e.payload)) {
      out.push_back(kTextDtype);
      out.push_back(1);
      put_le<std::uint64_t>(out, text->size());
      out.insert(out.end(), text->begin(), text->end());
      continue;
    }
    const Tensor& t = std::get<Tensor>(e.payload);
    if (t.rank() > 255) throw IoError("tensor rank too large for container");
    out.push_back(static_cast<std::uint8_t>(t.dtype()));
    out.push_back(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) put_le<std::uint64_t>(out, d);
    for (double v : t.data()) {
      if (t.dtype() == DType::f32) {
        put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      } else {
        put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
      }
    }
  }
  return out;
}

Container decode(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.take(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw IoError("not an RMTC container");
  const auto version = r.le<std::uint32_t>();
  if (version != kContainerVersion) {
    throw IoError("unsupported container version " + std::to_string(version));
  }
  const auto count = r.le<std::uint32_t>();
  Container c;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.le<std::uint32_t>();
    auto name_bytes = r.take(name_len);
    std::string name(name_bytes.begin(), name_bytes.end());
    const auto dtype = r.le<std::uint8_t>();
    const auto rank = r.le<std::uint8_t>();
    Shape shape(rank);
    for (auto& d : shape) d = r.le<std::uint64_t>();
    if (dtype == kTextDtype) {
      if (rank != 1) throw IoError("text entry '" + name + "' must have rank 1");
      auto text = r.take(shape[0]);
      c.put_text(std::move(name), std::string(text.begin(), text.end()));
      continue;
    }
    if (dtype != static_cast<std::uint8_t>(DType::f32) && dtype != static_cast<std::uint8_t>(DType::f64)) {
      throw IoError("entry '" + name + "' has unknown dtype code " + std::to_string(dtype));
    }
    const auto dt = static_cast<DType>(dtype);
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) {
      v = dt == DType::f32 ? static_cast<double>(std::bit_cast<float>(r.le<std::uint32_t>()))
                           : std::bit_cast<double>(r.le<std::uint64_t>());
    }
    c.put(std::move(name), Tensor(std::move(shape), std::move(values), dt));
  }
  if (!r.done()) throw IoError("trailing bytes after container entries");
  return c;
}

void write_container(const std::filesystem::path& path, const Container& c) {
  const auto bytes = encode(c);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode(bytes);
}

}  // namespace rhythm::io
