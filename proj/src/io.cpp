/* Copyright 2026 The vitreg Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

#include "vitreg/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

namespace vitreg {

namespace fs = std::filesystem;
using Kind = IoError::Kind;

namespace {

constexpr char kVolumeMagic[4] = {'V', 'V', 'O', 'L'};
constexpr char kCheckpointMagic[4] = {'V', 'C', 'K', 'P'};
constexpr std::uint16_t kVersion = 1;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <typename U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(char((std::uint64_t(v) >> (8 * i)) & 0xff));
  }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
  void f32s(std::span<const float> v) {
    for (float x : v) f32(x);
  }

  void flush(const fs::path& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError(Kind::open_failed, "cannot open " + path.string() + " for writing");
    os.write(buf_.data(), std::streamsize(buf_.size()));
    if (!os) throw IoError(Kind::open_failed, "failed writing " + path.string());
  }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  explicit Reader(const fs::path& path) : path_(path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError(Kind::open_failed, "cannot open " + path.string());
    buf_.assign(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
  }

  std::size_t remaining() const { return buf_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n)
      throw IoError(Kind::bad_header, path_.string() + ": file ends inside the " + what);
  }
  void bytes(void* out, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
  }
  template <typename U>
  U le(const char* what) {
    need(sizeof(U), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= std::uint64_t(std::uint8_t(buf_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return U(v);
  }
  void f32s(std::vector<float>& out, std::size_t n, const char* what) {
    need(4 * n, what);
    out.resize(n);
    for (auto& x : out) x = std::bit_cast<float>(le<std::uint32_t>(what));
  }

  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 2; }

const char* dtype_name(DType d) { return d == DType::f32 ? "f32" : "u16"; }

void write_volume_header(Writer& w, DType dtype, const Shape& extents) {
  w.bytes(kVolumeMagic, 4);
  w.le<std::uint16_t>(kVersion);
  w.le<std::uint16_t>(static_cast<std::uint16_t>(dtype));
  w.le<std::uint16_t>(static_cast<std::uint16_t>(extents.size()));
  w.le<std::uint16_t>(0);
  for (auto e : extents) {
    if (e > 0xffffffffull) throw IoError(Kind::bad_header, "extent " + std::to_string(e) + " does not fit in u32");
    w.le<std::uint32_t>(static_cast<std::uint32_t>(e));
  }
}

VolumeHeader parse_volume_header(Reader& r) {
  char magic[4];
  if (r.remaining() < 4) throw IoError(Kind::bad_magic, r.path().string() + ": bad magic (file shorter than 4 bytes)");
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kVolumeMagic, 4) != 0) throw IoError(Kind::bad_magic, r.path().string() + ": bad magic");
  const auto version = r.le<std::uint16_t>("header");
  if (version != kVersion)
    throw IoError(Kind::bad_version, r.path().string() + ": unsupported version " + std::to_string(version));
  const auto code = r.le<std::uint16_t>("header");
  if (code != 1 && code != 2)
    throw IoError(Kind::bad_header, r.path().string() + ": unknown dtype code " + std::to_string(code));
  const auto ndim = r.le<std::uint16_t>("header");
  r.le<std::uint16_t>("header");
  VolumeHeader h;
  h.dtype = static_cast<DType>(code);
  for (std::uint16_t i = 0; i < ndim; ++i) h.extents.push_back(r.le<std::uint32_t>("extents"));
  const std::size_t expected = numel(h.extents) * dtype_size(h.dtype);
  if (r.remaining() != expected) {
    const Kind k = r.remaining() < expected ? Kind::truncated_payload : Kind::bad_header;
    throw IoError(k, r.path().string() + (k == Kind::truncated_payload ? ": truncated payload" : ": trailing bytes") +
                         " (expected " + std::to_string(expected) + " bytes, got " + std::to_string(r.remaining()) + ")");
  }
  return h;
}

Extents extents3(const Shape& s, const fs::path& path) {
  if (s.size() != 3) throw IoError(Kind::bad_header, path.string() + ": label map must have 3 extents, got " + to_string(s));
  return {s[0], s[1], s[2]};
}

Tensor<float> read_f32_payload(Reader& r, const VolumeHeader& h) {
  std::vector<float> values;
  r.f32s(values, numel(h.extents), "payload");
  return Tensor<float>(h.extents, std::move(values));
}

LabelMap read_u16_payload(Reader& r, const VolumeHeader& h) {
  LabelMap m(extents3(h.extents, r.path()));
  for (auto& l : m.labels) l = r.le<std::uint16_t>("payload");
  return m;
}

void expect_dtype(const Reader& r, const VolumeHeader& h, DType want) {
  if (h.dtype != want)
    throw IoError(Kind::dtype_mismatch, r.path().string() + ": dtype mismatch (file holds " + dtype_name(h.dtype) +
                                            ", expected " + dtype_name(want) + ")");
}

}  // namespace

void save_volume(const fs::path& path, const Tensor<float>& volume) {
  Writer w;
  write_volume_header(w, DType::f32, volume.shape());
  w.f32s(volume.data());
  w.flush(path);
}

void save_labels(const fs::path& path, const LabelMap& labels) {
  Writer w;
  write_volume_header(w, DType::u16, Shape(labels.extents.begin(), labels.extents.end()));
  for (auto l : labels.labels) w.le<std::uint16_t>(l);
  w.flush(path);
}

VolumeHeader read_volume_header(const fs::path& path) {
  Reader r(path);
  return parse_volume_header(r);
}

Tensor<float> load_volume(const fs::path& path) {
  Reader r(path);
  const VolumeHeader h = parse_volume_header(r);
  expect_dtype(r, h, DType::f32);
  return read_f32_payload(r, h);
}

LabelMap load_labels(const fs::path& path) {
  Reader r(path);
  const VolumeHeader h = parse_volume_header(r);
  expect_dtype(r, h, DType::u16);
  return read_u16_payload(r, h);
}

std::variant<Tensor<float>, LabelMap> load_volume_file(const fs::path& path) {
  Reader r(path);
  const VolumeHeader h = parse_volume_header(r);
  if (h.dtype == DType::f32) return read_f32_payload(r, h);
  return read_u16_payload(r, h);
}

// ---------------------------------------------------------------------------
// Manifest

std::vector<const ManifestCase*> Manifest::split(const std::string& name) const {
  std::vector<const ManifestCase*> out;
  for (const auto& c : cases)
    if (c.split == name) out.push_back(&c);
  return out;
}

namespace {

using nlohmann::json;

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument("manifest: " + where + " must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items())
    if (!ok.count(k)) throw std::invalid_argument("manifest: unknown key '" + k + "' in " + where);
}

}  // namespace

Manifest load_manifest(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError(Kind::open_failed, "cannot open manifest " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("manifest " + path.string() + ": " + e.what());
  }
  Manifest m;
  m.root = path.parent_path();
  try {
    check_keys(j, {"version", "extents", "labels", "merge_pairs", "cases"}, "manifest");
    if (j.at("version").get<int>() != 1) throw std::invalid_argument("manifest: unsupported version");
    const auto ext = j.at("extents").get<std::vector<std::size_t>>();
    if (ext.size() != 3) throw std::invalid_argument("manifest: extents must have three entries");
    m.extents = {ext[0], ext[1], ext[2]};
    m.labels = j.at("labels").get<std::vector<std::uint16_t>>();
    if (j.contains("merge_pairs"))
      for (const auto& p : j.at("merge_pairs")) {
        const auto v = p.get<std::vector<std::uint16_t>>();
        if (v.size() != 2) throw std::invalid_argument("manifest: merge pairs must have two labels");
        m.merge_pairs.emplace_back(v[0], v[1]);
      }
    std::set<std::string> ids;
    for (const auto& c : j.at("cases")) {
      check_keys(c, {"id", "split", "fixed", "moving", "fixed_labels", "moving_labels", "field"}, "case");
      ManifestCase mc;
      mc.id = c.at("id").get<std::string>();
      mc.split = c.at("split").get<std::string>();
      mc.fixed = c.at("fixed").get<std::string>();
      mc.moving = c.at("moving").get<std::string>();
      mc.fixed_labels = c.value("fixed_labels", "");
      mc.moving_labels = c.value("moving_labels", "");
      mc.field = c.value("field", "");
      if (mc.split != "train" && mc.split != "val" && mc.split != "test")
        throw std::invalid_argument("manifest: case " + mc.id + " has unknown split '" + mc.split + "'");
      if (!ids.insert(mc.id).second) throw std::invalid_argument("manifest: duplicate case id " + mc.id);
      m.cases.push_back(std::move(mc));
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument("manifest " + path.string() + ": " + e.what());
  }

  const Shape want(m.extents.begin(), m.extents.end());
  for (const auto& c : m.cases) {
    for (const std::string* rel : {&c.fixed, &c.moving, &c.fixed_labels, &c.moving_labels, &c.field}) {
      if (rel->empty()) continue;
      const fs::path p = m.root / *rel;
      if (!fs::exists(p)) throw IoError(Kind::open_failed, "manifest case " + c.id + ": missing file " + p.string());
      const VolumeHeader h = read_volume_header(p);
      Shape spatial = h.extents;
      if (rel == &c.field) {
        if (spatial.size() != 4 || spatial[0] != 3)
          throw IoError(Kind::shape_mismatch, "manifest case " + c.id + ": field must be [3,D,H,W]");
        spatial.erase(spatial.begin());
      }
      if (spatial != want)
        throw IoError(Kind::shape_mismatch, "manifest case " + c.id + ": " + p.string() + " has extents " +
                                                to_string(spatial) + ", expected " + to_string(want));
    }
  }
  return m;
}

void save_manifest(const fs::path& path, const Manifest& manifest) {
  json j;
  j["version"] = 1;
  j["extents"] = std::vector<std::size_t>(manifest.extents.begin(), manifest.extents.end());
  j["labels"] = manifest.labels;
  json pairs = json::array();
  for (const auto& [a, b] : manifest.merge_pairs) pairs.push_back({a, b});
  j["merge_pairs"] = pairs;
  json cases = json::array();
  for (const auto& c : manifest.cases) {
    json jc = {{"id", c.id}, {"split", c.split}, {"fixed", c.fixed}, {"moving", c.moving}};
    if (!c.fixed_labels.empty()) jc["fixed_labels"] = c.fixed_labels;
    if (!c.moving_labels.empty()) jc["moving_labels"] = c.moving_labels;
    if (!c.field.empty()) jc["field"] = c.field;
    cases.push_back(std::move(jc));
  }
  j["cases"] = cases;
  std::ofstream os(path);
  if (!os) throw IoError(Kind::open_failed, "cannot open " + path.string() + " for writing");
  os << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const fs::path& path, const ModelParams<float>& params, const AdamState<float>& adam,
                     std::uint64_t epoch) {
  const bool moments = adam.initialized();
  if (moments && adam.first.size() != params.size())
    throw std::logic_error("save_checkpoint: optimizer state does not match parameters");
  Writer w;
  w.bytes(kCheckpointMagic, 4);
  w.le<std::uint16_t>(kVersion);
  w.le<std::uint16_t>(0);
  w.le<std::uint64_t>(epoch);
  w.le<std::uint64_t>(adam.step);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  const auto& entries = params.entries();
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const auto& [name, t] = entries[k];
    w.le<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.le<std::uint16_t>(static_cast<std::uint16_t>(t.rank()));
    for (auto e : t.shape()) w.le<std::uint32_t>(static_cast<std::uint32_t>(e));
    w.le<std::uint8_t>(moments ? 1 : 0);
    w.f32s(t.data());
    if (moments) {
      w.f32s(adam.first[k]);
      w.f32s(adam.second[k]);
    }
  }
  w.flush(path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  Reader r(path);
  char magic[4];
  if (r.remaining() < 4) throw IoError(Kind::bad_magic, path.string() + ": bad magic (file shorter than 4 bytes)");
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw IoError(Kind::bad_magic, path.string() + ": bad magic");
  const auto version = r.le<std::uint16_t>("header");
  if (version != kVersion)
    throw IoError(Kind::bad_version, path.string() + ": unsupported version " + std::to_string(version));
  r.le<std::uint16_t>("header");
  Checkpoint ck;
  ck.epoch = r.le<std::uint64_t>("header");
  ck.adam.step = r.le<std::uint64_t>("header");
  const auto count = r.le<std::uint32_t>("header");
  bool any_moments = false, all_moments = true;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = r.le<std::uint32_t>("entry name");
    std::string name(len, '\0');
    r.bytes(name.data(), len, "entry name");
    const auto ndim = r.le<std::uint16_t>("entry shape");
    Shape shape;
    for (std::uint16_t i = 0; i < ndim; ++i) shape.push_back(r.le<std::uint32_t>("entry shape"));
    const bool has = r.le<std::uint8_t>("entry") != 0;
    const std::size_t n = numel(shape);
    std::vector<float> values;
    if (r.remaining() < 4 * n * (has ? 3 : 1))
      throw IoError(Kind::truncated_payload, path.string() + ": truncated payload in entry " + name + " (expected " +
                                                 std::to_string(4 * n * (has ? 3 : 1)) + " bytes, got " +
                                                 std::to_string(r.remaining()) + ")");
    r.f32s(values, n, "payload");
    ck.params.add(name, Tensor<float>(shape, std::move(values), true));
    if (has) {
      ck.adam.first.emplace_back();
      ck.adam.second.emplace_back();
      r.f32s(ck.adam.first.back(), n, "payload");
      r.f32s(ck.adam.second.back(), n, "payload");
    }
    any_moments |= has;
    all_moments &= has;
  }
  if (any_moments && !all_moments) throw IoError(Kind::bad_header, path.string() + ": optimizer moments are incomplete");
  if (r.remaining() != 0) throw IoError(Kind::bad_header, path.string() + ": trailing bytes after last entry");
  return ck;
}

Checkpoint load_checkpoint(const fs::path& path, const ModelParams<float>& expected) {
  Checkpoint ck = load_checkpoint(path);
  std::vector<std::string> problems;
  for (const auto& [name, t] : expected.entries()) {
    if (!ck.params.contains(name))
      problems.push_back("missing " + name + " " + to_string(t.shape()));
    else if (ck.params.at(name).shape() != t.shape())
      problems.push_back(name + " has shape " + to_string(ck.params.at(name).shape()) + ", expected " +
                         to_string(t.shape()));
  }
  for (const auto& [name, t] : ck.params.entries())
    if (!expected.contains(name)) problems.push_back("unexpected " + name + " " + to_string(t.shape()));
  if (!problems.empty()) {
    std::ostringstream os;
    os << path.string() << ": checkpoint does not match the configured model (" << problems.size() << " entries):";
    for (const auto& p : problems) os << "\n  " << p;
    throw IoError(Kind::shape_mismatch, os.str());
  }
  // reorder to the expected parameter order so the moments line up
  Checkpoint out;
  out.epoch = ck.epoch;
  out.adam.step = ck.adam.step;
  std::map<std::string, std::size_t> pos;
  for (std::size_t k = 0; k < ck.params.size(); ++k) pos[ck.params.entries()[k].first] = k;
  for (const auto& [name, t] : expected.entries()) {
    const std::size_t k = pos.at(name);
    out.params.add(name, ck.params.entries()[k].second);
    if (ck.adam.initialized()) {
      out.adam.first.push_back(std::move(ck.adam.first[k]));
      out.adam.second.push_back(std::move(ck.adam.second[k]));
    }
  }
  return out;
}

}  // namespace vitreg
