// Copyright 2026 The flowcast Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "flowcast/model/model.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace flowcast
{

namespace
{

constexpr char kMagic[4] = {'F', 'C', 'K', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

class Writer
{
public:
  void bytes(const void * p, std::size_t n)
  {
    const auto * c = static_cast<const char *>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u32(std::uint32_t v)
  {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v)
  {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void str(const std::string & s)
  {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::string & data() const { return buf_; }

private:
  std::string buf_;
};

class Reader
{
public:
  Reader(const std::string & buf, std::size_t end) : buf_(buf), end_(end) {}
  void need(std::size_t n) const
  {
    if (pos_ + n > end_) throw SchemaError("checkpoint truncated");
  }
  std::uint32_t u32()
  {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_++])) << (8 * i);
    return v;
  }
  std::uint64_t u64()
  {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_++])) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str()
  {
    const std::uint32_t n = u32();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

private:
  const std::string & buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::uint32_t checksum(const std::string & data, std::size_t n)
{
  return static_cast<std::uint32_t>(
    crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef *>(data.data()), static_cast<uInt>(n)));
}

}  // namespace

void save_checkpoint(const Checkpoint & c, const std::string & path)
{
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.str(c.config.to_json());
  w.u32(static_cast<std::uint32_t>(c.parameters.size()));
  for (const auto & [name, t] : c.parameters) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape()) w.u64(static_cast<std::uint64_t>(d));
    for (Index i = 0; i < t.size(); ++i) w.f32(t[i]);
  }
  const std::uint32_t crc = checksum(w.data(), w.data().size());
  w.u32(crc);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
  if (!out) throw IoError("failed writing " + path);
}

Checkpoint load_checkpoint(const std::string & path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 12 || std::memcmp(buf.data(), kMagic, 4) != 0) throw SchemaError(path + ": not a checkpoint");
  const std::size_t body = buf.size() - 4;
  std::uint32_t stored = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    stored |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[body + i])) << (8 * i);
  }
  if (stored != checksum(buf, body)) throw SchemaError(path + ": checksum mismatch");
  Reader rr(buf, body);
  rr.u32();  // magic
  const std::uint32_t version = rr.u32();
  if (version != kCheckpointVersion) {
    throw SchemaError(path + ": checkpoint version " + std::to_string(version) + " unsupported");
  }
  Checkpoint c;
  c.config = ModelConfig::from_json(rr.str());
  const auto shapes = parameter_shapes(c.config);
  const std::uint32_t count = rr.u32();
  for (std::uint32_t n = 0; n < count; ++n) {
    const std::string name = rr.str();
    const std::uint32_t rank = rr.u32();
    Shape shape;
    for (std::uint32_t a = 0; a < rank; ++a) shape.push_back(static_cast<Index>(rr.u64()));
    const auto it = shapes.find(name);
    if (it == shapes.end() || it->second != shape) {
      throw SchemaError(path + ": unexpected parameter " + name + " " + shape_string(shape));
    }
    Tensor<float> t(shape);
    for (Index i = 0; i < t.size(); ++i) t[i] = rr.f32();
    c.parameters.emplace(name, std::move(t));
  }
  if (c.parameters.size() != shapes.size()) throw SchemaError(path + ": missing parameters");
  return c;
}

}  // namespace flowcast
