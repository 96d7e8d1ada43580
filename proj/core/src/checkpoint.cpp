#include "myow/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "myow/tensor.hpp"

namespace myow {

namespace {

constexpr char kMagic[8] = {'M', 'Y', 'O', 'W', 'C', 'K', 'P', '1'};
constexpr std::uint32_t kVersion = 1;

// The format is defined little-endian; the supported platforms all are, so
// values are written verbatim.
template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

void write_string(std::ostream& out, const std::string& s) {
  write_pod<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  const auto n = read_pod<std::uint64_t>(in);
  if (n > (1ull << 30)) throw std::runtime_error("checkpoint: bad string size");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return s;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path);
  out.write(kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(out, kVersion);
  write_string(out, ckpt.config_text);
  write_pod<std::int64_t>(out, ckpt.step);
  write_pod<std::int64_t>(out, ckpt.epoch);
  write_pod<std::int64_t>(out, ckpt.optimizer_steps);

  write_pod<std::uint64_t>(out, ckpt.rng_states.size());
  for (const auto& [name, state] : ckpt.rng_states) {
    write_string(out, name);
    for (auto word : state) write_pod<std::uint64_t>(out, word);
  }

  write_pod<std::uint64_t>(out, ckpt.tensors.size());
  for (const auto& [name, tensor] : ckpt.tensors) {
    write_string(out, name);
    const auto& shape = tensor.shape();
    write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(shape.size()));
    for (auto dim : shape) write_pod<std::uint64_t>(out, dim);
    const auto& vals = tensor.values();
    out.write(reinterpret_cast<const char*>(vals.data()),
              static_cast<std::streamsize>(vals.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(version));
  Checkpoint ckpt;
  ckpt.config_text = read_string(in);
  ckpt.step = static_cast<long>(read_pod<std::int64_t>(in));
  ckpt.epoch = static_cast<long>(read_pod<std::int64_t>(in));
  ckpt.optimizer_steps = static_cast<long>(read_pod<std::int64_t>(in));

  const auto n_rng = read_pod<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < n_rng; ++i) {
    std::string name = read_string(in);
    std::array<std::uint64_t, 4> state{};
    for (auto& word : state) word = read_pod<std::uint64_t>(in);
    ckpt.rng_states.emplace_back(std::move(name), state);
  }

  const auto n_tensors = read_pod<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    std::string name = read_string(in);
    const auto rank = read_pod<std::uint8_t>(in);
    std::vector<std::size_t> shape;
    std::size_t count = 1;
    for (std::uint8_t r = 0; r < rank; ++r) {
      const auto dim = static_cast<std::size_t>(read_pod<std::uint64_t>(in));
      shape.push_back(dim);
      count *= dim;
    }
    std::vector<double> vals(count);
    in.read(reinterpret_cast<char*>(vals.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint: truncated tensor " + name);
    ckpt.tensors.emplace_back(std::move(name),
                              Tensor::from_values(std::move(shape), std::move(vals)));
  }
  return ckpt;
}

}  // namespace myow
