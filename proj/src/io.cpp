#include "crispedge/io.hpp"

#include <bit>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "crispedge/errors.hpp"

namespace crispedge {

namespace {

constexpr char crb_magic[4] = {'C', 'R', 'B', '1'};
constexpr std::size_t crb_header = 4 + 4 * 4;

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(std::string_view in, std::size_t offset) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<unsigned char>(in[offset + i])) << (8 * i);
  return v;
}

}  // namespace

std::string encode_crb(const Tensor& t) {
  std::string out(crb_magic, 4);
  const Shape& s = t.shape();
  for (int d : {s.n, s.c, s.h, s.w}) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  out.reserve(out.size() + 8 * t.size());
  for (double v : t.values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

Tensor decode_crb(std::string_view bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), crb_magic, 4) != 0) {
    throw ParseError("byte 0: missing CRB1 magic");
  }
  if (bytes.size() < crb_header) {
    throw ParseError("byte 4: header needs " + std::to_string(crb_header) + " bytes, " +
                     std::to_string(bytes.size()) + " available");
  }
  int dims[4];
  std::uint64_t count = 1;
  for (int i = 0; i < 4; ++i) {
    const std::uint32_t d = get_le<std::uint32_t>(bytes, 4 + 4 * i);
    if (d == 0 || d > (1u << 24)) {
      throw ParseError("byte " + std::to_string(4 + 4 * i) + ": dimension " + std::to_string(d) + " out of range");
    }
    dims[i] = static_cast<int>(d);
    count *= d;
  }
  const std::uint64_t expected = crb_header + 8 * count;
  if (bytes.size() != expected) {
    throw ParseError("byte " + std::to_string(crb_header) + ": expected " + std::to_string(expected) +
                     " bytes, " + std::to_string(bytes.size()) + " available");
  }
  Tensor t(Shape{dims[0], dims[1], dims[2], dims[3]});
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = std::bit_cast<double>(get_le<std::uint64_t>(bytes, crb_header + 8 * i));
  }
  return t;
}

std::string encode_pgm(const BoundaryMap& b) {
  std::string out = "P5\n" + std::to_string(b.cols()) + " " + std::to_string(b.rows()) + "\n255\n";
  for (auto v : b.values()) out.push_back(static_cast<char>(v ? 255 : 0));
  return out;
}

BoundaryMap decode_pgm(std::string_view bytes) {
  std::size_t pos = 0;
  if (bytes.substr(0, 2) != "P5") throw ParseError("byte 0: not a binary PGM (P5)");
  pos = 2;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos])) != 0) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) {
    skip_space();
    const std::size_t start = pos;
    long v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos])) != 0 && v < (1L << 24)) {
      v = v * 10 + (bytes[pos] - '0');
      ++pos;
    }
    if (pos == start) throw ParseError("byte " + std::to_string(start) + ": expected " + what);
    return v;
  };
  const long w = number("width");
  const long h = number("height");
  const long maxval = number("maxval");
  if (w < 1 || h < 1) throw ParseError("byte " + std::to_string(pos) + ": empty image");
  if (maxval != 255) throw ParseError("byte " + std::to_string(pos) + ": maxval must be 255");
  if (pos >= bytes.size() || std::isspace(static_cast<unsigned char>(bytes[pos])) == 0) {
    throw ParseError("byte " + std::to_string(pos) + ": expected whitespace after header");
  }
  ++pos;
  const std::size_t need = static_cast<std::size_t>(w) * h;
  if (bytes.size() - pos != need) {
    throw ParseError("byte " + std::to_string(pos) + ": expected " + std::to_string(need) + " pixel bytes, " +
                     std::to_string(bytes.size() - pos) + " available");
  }
  BoundaryMap b(static_cast<int>(h), static_cast<int>(w), 0);
  for (std::size_t i = 0; i < need; ++i) {
    const auto v = static_cast<unsigned char>(bytes[pos + i]);
    if (v != 0 && v != 255) {
      throw ValidationError("byte " + std::to_string(pos + i) + ": annotation value " + std::to_string(v) +
                            " is not 0 or 255");
    }
    b[i] = v ? 1 : 0;
  }
  return b;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

namespace {

template <typename F>
auto with_path(const std::filesystem::path& path, F&& f) {
  try {
    return f();
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

}  // namespace

Tensor read_crb(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  return with_path(path, [&] { return decode_crb(bytes); });
}

void write_crb(const Tensor& t, const std::filesystem::path& path) { write_file(path, encode_crb(t)); }

BoundaryMap read_pgm(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  return with_path(path, [&] { return decode_pgm(bytes); });
}

void write_pgm(const BoundaryMap& b, const std::filesystem::path& path) { write_file(path, encode_pgm(b)); }

namespace {

std::vector<std::string> split_on(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t p = s.find(sep, start);
    out.emplace_back(s.substr(start, p == std::string_view::npos ? std::string_view::npos : p - start));
    if (p == std::string_view::npos) break;
    start = p + 1;
  }
  return out;
}

}  // namespace

Manifest Manifest::parse(std::string_view text) {
  Manifest m;
  int line_no = 0;
  for (std::string line : split_on(text, '\n')) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> f = split_on(line, '\t');
    if (f.size() != 4) {
      throw ParseError("manifest line " + std::to_string(line_no) + ": expected 4 tab-separated fields, got " +
                       std::to_string(f.size()));
    }
    ManifestEntry e{f[0], f[1], split_on(f[2], ','), f[3]};
    if (e.id.empty() || e.image.empty()) {
      throw ParseError("manifest line " + std::to_string(line_no) + ": empty id or image path");
    }
    for (const std::string& a : e.annotations) {
      if (a.empty()) throw ParseError("manifest line " + std::to_string(line_no) + ": empty annotation path");
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

std::string Manifest::format() const {
  std::string out;
  for (const ManifestEntry& e : entries) {
    out += e.id + '\t' + e.image + '\t';
    for (std::size_t i = 0; i < e.annotations.size(); ++i) out += (i ? "," : "") + e.annotations[i];
    out += '\t' + e.split + '\n';
  }
  return out;
}

Manifest Manifest::read(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  try {
    return parse(text);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void Manifest::write(const std::filesystem::path& path) const { write_file(path, format()); }

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : s) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace crispedge
