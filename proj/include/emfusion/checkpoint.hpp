#pragma once

#include "data_io.hpp"
#include "denoiser.hpp"
#include "diffusion.hpp"
#include "emf_data.hpp"
#include "ensemble.hpp"
#include "error.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace emfusion {

//! Everything needed to forecast with trained models.
struct Checkpoint
{
  static constexpr std::uint32_t kVersion = 1;

  NetConfig net;
  ScheduleConfig schedule;
  std::size_t history{ 0 };
  std::size_t horizon{ 0 };
  std::size_t channels{ 0 };
  ConditionSchema schema{ ConditionSchema::none };
  ScaleRecord scale;
  std::vector<Denoiser> models; // one per channel in univariate mode
};

inline std::uint64_t
fnv1a64(const std::string& bytes)
{
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace detail {

class PayloadWriter
{
public:
  void num(double v) { put_f64(out_, v); }
  void count(std::size_t v) { num(static_cast<double>(v)); }
  std::string str() const { return out_.str(); }

private:
  std::ostringstream out_{ std::ios::binary };
};

class PayloadReader
{
public:
  explicit PayloadReader(const std::string& bytes)
    : in_(bytes, std::ios::binary)
  {}
  double num() { return get_f64(in_); }
  std::size_t count()
  {
    const double v = num();
    if (!(v >= 0.0 && v < 9.0e15) || v != std::floor(v)) {
      throw InvalidInput("checkpoint: corrupt integer field");
    }
    return static_cast<std::size_t>(v);
  }
  bool done() { return in_.peek() == std::char_traits<char>::eof(); }

private:
  std::istringstream in_;
};

} // namespace detail

inline constexpr char kCheckpointMagic[8] = { 'E', 'M', 'F', 'C', 'K', 'P', 'T', '\0' };

inline std::string
checkpoint_payload(const Checkpoint& ck)
{
  detail::PayloadWriter w;
  w.count(ck.schedule.steps);
  w.num(ck.schedule.beta_start);
  w.num(ck.schedule.beta_end);
  w.count(ck.history);
  w.count(ck.horizon);
  w.count(ck.channels);
  w.count(static_cast<std::size_t>(ck.schema));
  w.count(ck.net.depth);
  w.count(ck.net.width);
  w.count(ck.net.heads);
  w.count(ck.net.cond_width);
  w.num(ck.net.dropout);
  w.count(static_cast<std::size_t>(ck.net.mode));
  w.count(ck.scale.offset.size());
  for (std::size_t c = 0; c < ck.scale.offset.size(); ++c) {
    w.num(ck.scale.offset[c]);
    w.num(ck.scale.scale[c]);
  }
  w.count(ck.models.size());
  for (const auto& m : ck.models) {
    const auto& p = m.params();
    w.count(p.tensors.size());
    for (const auto& t : p.tensors) {
      w.count(t.numel());
      for (double v : t.data) w.num(v);
    }
  }
  return w.str();
}

inline void
write_checkpoint(std::ostream& out, const Checkpoint& ck)
{
  const std::string payload = checkpoint_payload(ck);
  out.write(kCheckpointMagic, 8);
  unsigned char ver[4];
  for (int i = 0; i < 4; ++i) ver[i] = static_cast<unsigned char>(Checkpoint::kVersion >> (8 * i));
  out.write(reinterpret_cast<const char*>(ver), 4);
  detail::put_u64(out, payload.size());
  detail::put_u64(out, fnv1a64(payload));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
}

inline void
save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck)
{
  io::write_atomically(path, [&](std::ostream& out) { write_checkpoint(out, ck); }, true);
}

inline Checkpoint
load_checkpoint(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint '" + path.string() + "'");
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw InvalidInput("'" + path.string() + "' is not a checkpoint");
  }
  unsigned char ver[4];
  if (!in.read(reinterpret_cast<char*>(ver), 4)) throw InvalidInput("truncated checkpoint");
  std::uint32_t version = 0;
  for (int i = 0; i < 4; ++i) version |= std::uint32_t{ ver[i] } << (8 * i);
  if (version != Checkpoint::kVersion) {
    throw InvalidInput("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint64_t size = detail::get_u64(in);
  const std::uint64_t hash = detail::get_u64(in);
  if (size > (std::uint64_t{ 1 } << 34)) throw InvalidInput("implausible checkpoint size");
  std::string payload(size, '\0');
  if (!in.read(payload.data(), static_cast<std::streamsize>(size))) {
    throw InvalidInput("truncated checkpoint payload");
  }
  if (fnv1a64(payload) != hash) throw InvalidInput("checkpoint hash mismatch");

  detail::PayloadReader r(payload);
  Checkpoint ck;
  ck.schedule.steps = r.count();
  ck.schedule.beta_start = r.num();
  ck.schedule.beta_end = r.num();
  ck.history = r.count();
  ck.horizon = r.count();
  ck.channels = r.count();
  const std::size_t schema = r.count();
  if (schema > static_cast<std::size_t>(ConditionSchema::multi)) throw InvalidInput("bad schema tag");
  ck.schema = static_cast<ConditionSchema>(schema);
  ck.net.depth = r.count();
  ck.net.width = r.count();
  ck.net.heads = r.count();
  ck.net.cond_width = r.count();
  ck.net.dropout = r.num();
  const std::size_t mode = r.count();
  if (mode > 1) throw InvalidInput("bad mode tag");
  ck.net.mode = static_cast<NetMode>(mode);
  const std::size_t nscale = r.count();
  for (std::size_t c = 0; c < nscale; ++c) {
    ck.scale.offset.push_back(r.num());
    ck.scale.scale.push_back(r.num());
  }
  const std::size_t nmodels = r.count();
  for (std::size_t m = 0; m < nmodels; ++m) {
    Denoiser d(ck.net);
    const std::size_t nt = r.count();
    if (nt != d.params().tensors.size()) throw InvalidInput("checkpoint tensor count mismatch");
    for (auto& t : d.params().tensors) {
      if (r.count() != t.numel()) throw InvalidInput("checkpoint tensor size mismatch");
      for (double& v : t.data) v = r.num();
    }
    ck.models.push_back(std::move(d));
  }
  if (!r.done()) throw InvalidInput("trailing bytes in checkpoint payload");
  return ck;
}

} // namespace emfusion
