#include "fmla/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <map>

namespace fmla {

namespace {

constexpr char kMagic[4] = {'F', 'M', 'L', 'A'};
constexpr std::uint8_t kVersion = 0x01;
constexpr std::uint32_t kMetaVersion = 1;

void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v & 0xff));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}
void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_f32(std::vector<std::uint8_t>& b, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(b, bits);
}

struct Reader {
  const std::vector<std::uint8_t>& buf;
  std::size_t pos = 0;
  void need(std::size_t n) {
    if (pos + n > buf.size())
      throw CheckpointTruncated("checkpoint truncated at byte " +
                                std::to_string(pos));
  }
  std::uint8_t u8() {
    need(1);
    return buf[pos++];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(buf[pos] | (buf[pos + 1] << 8));
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }
};

std::vector<float> encode_config(const ModelConfig& c) {
  std::vector<float> v = {
      static_cast<float>(kMetaVersion),
      static_cast<float>(c.num_blocks),
      static_cast<float>(c.d),
      static_cast<float>(c.num_heads),
      static_cast<float>(c.c),
      static_cast<float>(c.kernel_size),
      static_cast<float>(c.ffn_expansion),
      static_cast<float>(c.self_distill_n),
      static_cast<float>(c.num_classes),
      static_cast<float>(c.seq_len),
      static_cast<float>(c.mask_ratio),
      static_cast<float>(c.mask_phase),
      c.mask_per_head ? 1.0f : 0.0f,
      c.mask_scope == MaskScope::kBlockOutput ? 1.0f : 0.0f,
      c.pooling_residual ? 1.0f : 0.0f,
      c.normalize_f ? 1.0f : 0.0f,
      static_cast<float>(c.alpha),
      static_cast<float>(c.beta),
  };
  for (int ch : c.dcn_channels) v.push_back(static_cast<float>(ch));
  return v;
}

ModelConfig decode_config(const std::vector<float>& v) {
  if (v.size() < 18 || static_cast<std::uint32_t>(v[0]) != kMetaVersion)
    throw CheckpointError("unrecognized meta/config layout");
  ModelConfig c;
  c.num_blocks = static_cast<int>(v[1]);
  c.d = static_cast<int>(v[2]);
  c.num_heads = static_cast<int>(v[3]);
  c.c = static_cast<int>(v[4]);
  c.kernel_size = static_cast<int>(v[5]);
  c.ffn_expansion = static_cast<int>(v[6]);
  c.self_distill_n = static_cast<int>(v[7]);
  c.num_classes = static_cast<int>(v[8]);
  c.seq_len = static_cast<int>(v[9]);
  c.mask_ratio = v[10];
  c.mask_phase = static_cast<int>(v[11]);
  c.mask_per_head = v[12] != 0.0f;
  c.mask_scope = v[13] != 0.0f ? MaskScope::kBlockOutput : MaskScope::kPerHead;
  c.pooling_residual = v[14] != 0.0f;
  c.normalize_f = v[15] != 0.0f;
  c.alpha = v[16];
  c.beta = v[17];
  if (v.size() != 18 + static_cast<std::size_t>(c.num_blocks))
    throw CheckpointError("meta/config length mismatch");
  c.dcn_channels.clear();
  for (int i = 0; i < c.num_blocks; ++i)
    c.dcn_channels.push_back(static_cast<int>(v[18 + static_cast<std::size_t>(i)]));
  return c;
}

void append_tensor(std::vector<std::uint8_t>& out, const std::string& name,
                   const Dims& dims, const std::vector<float>& payload) {
  put_u16(out, static_cast<std::uint16_t>(name.size()));
  out.insert(out.end(), name.begin(), name.end());
  out.push_back(static_cast<std::uint8_t>(dims.size()));
  for (int e : dims) put_u32(out, static_cast<std::uint32_t>(e));
  for (float f : payload) put_f32(out, f);
}

}  // namespace

void save_checkpoint(const FmlaModel& model, const std::filesystem::path& path) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  out.push_back(kVersion);

  const auto& params = model.trainable();
  const auto& bufs = model.buffers();
  const std::uint32_t count =
      static_cast<std::uint32_t>(1 + params.size() + bufs.size());
  put_u32(out, count);

  const std::vector<float> meta = encode_config(model.config());
  append_tensor(out, "meta/config", {static_cast<int>(meta.size())}, meta);
  auto write_entry = [&](const std::string& name, const Tensor& t) {
    std::vector<float> payload;
    payload.reserve(t.raw().size());
    for (double v : t.raw()) payload.push_back(static_cast<float>(v));
    append_tensor(out, name, t.dims(), payload);
  };
  for (const auto& [name, t] : params) write_entry(name, t);
  for (const auto& [name, t] : bufs) write_entry(name, t);

  const std::uint32_t crc = static_cast<std::uint32_t>(
      crc32(0L, out.data(), static_cast<uInt>(out.size())));
  put_u32(out, crc);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write checkpoint " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
}

FmlaModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)),
                                std::istreambuf_iterator<char>());

  Reader r{buf};
  const std::string magic = r.str(4);
  if (magic != std::string(kMagic, 4))
    throw CheckpointBadMagic("bad checkpoint magic in " + path.string());
  const std::uint8_t version = r.u8();
  if (version != kVersion)
    throw CheckpointBadVersion("unsupported checkpoint version " +
                               std::to_string(version));
  const std::uint32_t count = r.u32();

  struct Entry {
    Dims dims;
    std::vector<float> payload;
  };
  std::map<std::string, Entry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = r.u16();
    const std::string name = r.str(name_len);
    const std::uint8_t rank = r.u8();
    Entry e;
    std::int64_t numel = 1;
    for (int k = 0; k < rank; ++k) {
      const std::uint32_t ext = r.u32();
      e.dims.push_back(static_cast<int>(ext));
      numel *= ext;
    }
    e.payload.reserve(static_cast<std::size_t>(numel));
    for (std::int64_t k = 0; k < numel; ++k) e.payload.push_back(r.f32());
    entries.emplace(name, std::move(e));
  }
  const std::uint32_t stored_crc = r.u32();
  if (r.pos != buf.size())
    throw CheckpointTruncated("trailing bytes after checkpoint CRC");
  const std::uint32_t actual_crc = static_cast<std::uint32_t>(
      crc32(0L, buf.data(), static_cast<uInt>(buf.size() - 4)));
  if (stored_crc != actual_crc)
    throw CheckpointBadCrc("checkpoint CRC mismatch in " + path.string());

  auto meta_it = entries.find("meta/config");
  if (meta_it == entries.end())
    throw CheckpointError("checkpoint has no meta/config entry");
  FmlaModel model(decode_config(meta_it->second.payload));

  auto restore = [&](const std::string& name, Tensor& t) {
    auto it = entries.find(name);
    if (it == entries.end())
      throw CheckpointError("checkpoint is missing tensor " + name);
    if (it->second.dims != t.dims())
      throw CheckpointError("checkpoint tensor " + name + " has shape " +
                            dims_str(it->second.dims) + ", expected " +
                            dims_str(t.dims()));
    for (std::size_t i = 0; i < t.raw().size(); ++i)
      t.raw()[i] = static_cast<double>(it->second.payload[i]);
  };
  for (auto& [name, t] : model.trainable()) restore(name, t);
  for (auto& [name, t] : model.buffers()) restore(name, t);
  return model;
}

}  // namespace fmla
