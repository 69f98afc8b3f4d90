#include "probact/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "probact/error.hpp"

namespace probact::io {

namespace {

constexpr char kMagic[4] = {'P', 'B', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kMaxRank = 8;
constexpr std::size_t kMaxNameLen = 1u << 20;

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4] = {};
  in.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8] = {};
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void put_section(std::ostream& out,
                 const std::vector<std::pair<std::string, Tensor>>& ts) {
  put_u64(out, ts.size());
  for (const auto& [name, t] : ts) {
    put_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d = 0; d < t.rank(); ++d) put_u64(out, t.extent(d));
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.numel() * sizeof(real)));
  }
}

std::vector<std::pair<std::string, Tensor>> get_section(std::istream& in,
                                                        const char* what) {
  const std::uint64_t count = get_u64(in);
  if (!in) throw CheckpointError(std::string(what) + ": truncated section");
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count && in; ++i) {
    const std::uint64_t name_len = get_u64(in);
    if (name_len > kMaxNameLen) {
      throw CheckpointError(std::string(what) + ": corrupt tensor name");
    }
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    const std::uint32_t rank = get_u32(in);
    if (rank > kMaxRank) {
      throw CheckpointError(std::string(what) + ": tensor '" + name +
                            "' has implausible rank");
    }
    Shape shape(rank);
    for (std::uint32_t d = 0; d < rank; ++d) shape[d] = get_u64(in);
    Tensor t = Tensor::zeros(shape);
    in.read(reinterpret_cast<char*>(t.mutable_data()),
            static_cast<std::streamsize>(t.numel() * sizeof(real)));
    if (!in) {
      throw CheckpointError(std::string(what) + ": truncated at tensor '" +
                            name + "'");
    }
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open '" + path + "' for writing");
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(sizeof(real)));
  put_u64(out, ck.config_json.size());
  out.write(ck.config_json.data(),
            static_cast<std::streamsize>(ck.config_json.size()));
  put_u64(out, ck.pass_count);
  put_u64(out, ck.epochs_completed);
  put_u64(out, ck.optimizer_steps);
  out.put(ck.optimizer.empty() ? '\0' : '\1');
  put_section(out, ck.params);
  put_section(out, ck.buffers);
  if (!ck.optimizer.empty()) put_section(out, ck.optimizer);
  if (!out) throw CheckpointError("write to '" + path + "' failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw CheckpointError("'" + path + "' is not a checkpoint file");
  }
  const std::uint32_t version = get_u32(in);
  if (version != kVersion) {
    throw CheckpointError("'" + path + "': unsupported version " +
                          std::to_string(version));
  }
  const std::uint32_t width = get_u32(in);
  if (width != sizeof(real)) {
    throw CheckpointError(
        "'" + path + "' stores " + std::to_string(width * 8) +
        "-bit values but this build uses " +
        std::to_string(sizeof(real) * 8) + "-bit");
  }
  Checkpoint ck;
  const std::uint64_t cfg_len = get_u64(in);
  ck.config_json.resize(cfg_len);
  in.read(ck.config_json.data(), static_cast<std::streamsize>(cfg_len));
  ck.pass_count = get_u64(in);
  ck.epochs_completed = get_u64(in);
  ck.optimizer_steps = get_u64(in);
  const int has_optimizer = in.get();
  if (!in) throw CheckpointError("'" + path + "': truncated header");
  ck.params = get_section(in, "params");
  ck.buffers = get_section(in, "buffers");
  if (has_optimizer == 1) ck.optimizer = get_section(in, "optimizer");
  return ck;
}

}  // namespace probact::io
