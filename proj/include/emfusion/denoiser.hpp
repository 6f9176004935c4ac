#pragma once

#include "autograd.hpp"
#include "emf_data.hpp"
#include "encoding.hpp"
#include "error.hpp"
#include "rng.hpp"
#include "tensor.hpp"

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace emfusion {

enum class NetMode
{
  univariate,
  multivariate
};

inline NetMode
parse_net_mode(std::string_view s)
{
  if (s == "uv" || s == "univariate") return NetMode::univariate;
  if (s == "mv" || s == "multivariate") return NetMode::multivariate;
  throw ConfigError("unknown mode '" + std::string(s) + "' (expected uv or mv)");
}

inline std::string
to_string(NetMode m)
{
  return m == NetMode::univariate ? "uv" : "mv";
}

struct NetConfig
{
  std::size_t depth{ 2 };
  std::size_t width{ 16 };
  std::size_t heads{ 2 };
  std::size_t cond_width{ 16 }; // d_f
  double dropout{ 0.0 };
  NetMode mode{ NetMode::multivariate };

  std::size_t level_width(std::size_t level) const
  {
    return width << std::min<std::size_t>(level, 3);
  }
  std::size_t kernel_w() const { return mode == NetMode::multivariate ? 3 : 1; }
  std::size_t embed_width() const { return width; }
  std::size_t pad_multiple() const { return std::size_t{ 1 } << depth; }

  void validate() const
  {
    if (depth < 1) throw ConfigError("net depth must be >= 1");
    if (width < 2 || width % 2 != 0) throw ConfigError("net width must be even and >= 2");
    if (heads < 1) throw ConfigError("attention heads must be >= 1");
    for (std::size_t l = 0; l <= depth; ++l) {
      if (level_width(l) % heads != 0) {
        throw ConfigError("attention heads (" + std::to_string(heads) +
                          ") must divide level width " + std::to_string(level_width(l)));
      }
    }
    if (cond_width < 1) throw ConfigError("condition width must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
  }

  static NetConfig full()
  {
    NetConfig c;
    c.depth = 6;
    c.width = 64;
    c.heads = 8;
    c.cond_width = 64;
    return c;
  }
  static NetConfig desk()
  {
    NetConfig c;
    c.depth = 2;
    c.width = 16;
    c.heads = 2;
    c.cond_width = 16;
    return c;
  }
};

// ---------------------------------------------------------------------------
// Condition tensors
// ---------------------------------------------------------------------------

//! Number of encoded columns a schema needs: season one-hot (4), binary
//! flags as scalars, plus a presence column. The null condition is all zeros.
inline std::size_t
encoded_condition_width(ConditionSchema schema)
{
  switch (schema) {
    case ConditionSchema::none: return 0;
    case ConditionSchema::working_day:
    case ConditionSchema::working_hour: return 2;
    case ConditionSchema::season: return 5;
    case ConditionSchema::multi: return 6;
  }
  return 0;
}

//! Encodes a (rows x raw) condition slice into `out` (rows x d_f), leading
//! columns filled, remaining columns zero.
inline void
encode_conditions(const ConditionTrack& track, std::size_t d_f, bool null_condition, double* out)
{
  const std::size_t rows = track.steps();
  std::fill(out, out + rows * d_f, 0.0);
  if (null_condition || track.schema == ConditionSchema::none) {
    return;
  }
  if (encoded_condition_width(track.schema) > d_f) {
    throw ConfigError("condition width " + std::to_string(d_f) + " too small for schema " +
                      to_string(track.schema));
  }
  for (std::size_t r = 0; r < rows; ++r) {
    double* o = out + r * d_f;
    std::size_t col = 0;
    auto season = [&](double s) {
      const int k = static_cast<int>(s);
      if (k < 1 || k > 4) {
        throw InvalidInput("season feature out of range");
      }
      o[col + static_cast<std::size_t>(k - 1)] = 1.0;
      col += 4;
    };
    switch (track.schema) {
      case ConditionSchema::working_day:
      case ConditionSchema::working_hour: o[col++] = track.features(r, 0); break;
      case ConditionSchema::season: season(track.features(r, 0)); break;
      case ConditionSchema::multi:
        season(track.features(r, 0));
        o[col++] = track.features(r, 1);
        break;
      case ConditionSchema::none: break;
    }
    o[col] = 1.0;
  }
}

//! Batched (B, rows, d_f) condition tensor.
inline Tensor
condition_tensor(std::span<const ConditionTrack* const> tracks,
                 std::size_t d_f,
                 std::span<const char> null_flags = {})
{
  if (tracks.empty()) {
    throw UsageError("condition_tensor: empty batch");
  }
  const std::size_t rows = tracks.front()->steps();
  Tensor out({ tracks.size(), rows, d_f });
  for (std::size_t b = 0; b < tracks.size(); ++b) {
    if (tracks[b]->steps() != rows) {
      throw ConfigError("condition slices of different length in one batch");
    }
    const bool null = !null_flags.empty() && null_flags[b] != 0;
    encode_conditions(*tracks[b], d_f, null, out.ptr() + b * rows * d_f);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct BlockLayout
{
  std::size_t in{ 0 }, out{ 0 };
  std::size_t gn1_g, gn1_b, conv1_w, conv1_b, temb_w, temb_b;
  std::size_t wq, wk, wv, wo, bo;
  std::size_t gn2_g, gn2_b, conv2_w, conv2_b;
  std::optional<std::size_t> skip_w, skip_b;
};

struct NetLayout
{
  std::size_t in_w, in_b;
  std::vector<BlockLayout> enc;
  std::vector<std::size_t> down_w, down_b;
  BlockLayout mid;
  std::vector<std::size_t> up_w, up_b; // indexed by level
  std::vector<BlockLayout> dec;        // indexed by level
  std::size_t out_g, out_b, out_w, out_bias;
};

enum class InitKind
{
  conv,
  linear,
  ones,
  zeros
};

//! Named parameter tensors of one denoiser.
struct DenoiserParams
{
  std::vector<std::string> names;
  std::vector<Tensor> tensors;
  std::vector<InitKind> init;

  std::size_t add(std::string name, Shape shape, InitKind kind)
  {
    names.push_back(std::move(name));
    tensors.emplace_back(std::move(shape));
    init.push_back(kind);
    return tensors.size() - 1;
  }

  std::size_t count() const
  {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.numel();
    return n;
  }

  bool all_finite() const
  {
    for (const auto& t : tensors) {
      if (!t.all_finite()) return false;
    }
    return true;
  }
};

struct ForwardOptions
{
  CounterRng* dropout_rng{ nullptr }; // dropout active only when set
  ag::AttentionTrace* trace{ nullptr };
};

class Denoiser
{
public:
  Denoiser() = default;

  explicit Denoiser(NetConfig cfg)
    : cfg_(cfg)
  {
    cfg_.validate();
    build_layout();
  }

  const NetConfig& config() const { return cfg_; }
  const NetLayout& layout() const { return layout_; }
  DenoiserParams& params() { return params_; }
  const DenoiserParams& params() const { return params_; }

  //! Fan-in scaled uniform init; the output convolution starts at zero.
  void initialize(CounterRng& rng)
  {
    for (std::size_t i = 0; i < params_.tensors.size(); ++i) {
      Tensor& t = params_.tensors[i];
      switch (params_.init[i]) {
        case InitKind::ones: std::fill(t.data.begin(), t.data.end(), 1.0); break;
        case InitKind::zeros: std::fill(t.data.begin(), t.data.end(), 0.0); break;
        case InitKind::conv: {
          const double fan_in = static_cast<double>(t.numel() / t.dim(0));
          const double bound = std::sqrt(6.0 / fan_in);
          for (double& v : t.data) v = (2.0 * rng.uniform() - 1.0) * bound;
          break;
        }
        case InitKind::linear: {
          const double bound = 1.0 / std::sqrt(static_cast<double>(t.dim(0)));
          for (double& v : t.data) v = (2.0 * rng.uniform() - 1.0) * bound;
          break;
        }
      }
    }
    std::fill(params_.tensors[layout_.out_w].data.begin(), params_.tensors[layout_.out_w].data.end(), 0.0);
  }

  //! Every tensor drawn uniformly from [-scale, scale] (gradient checks).
  void randomize(CounterRng& rng, double scale)
  {
    for (auto& t : params_.tensors) {
      for (double& v : t.data) v = (2.0 * rng.uniform() - 1.0) * scale;
    }
  }

  std::vector<ag::Var> bind(ag::Tape& tape) const
  {
    std::vector<ag::Var> vars;
    vars.reserve(params_.tensors.size());
    for (const auto& t : params_.tensors) {
      vars.push_back(tape.leaf(t, true));
    }
    return vars;
  }

  //! Predicted noise for x_t of shape (B, 1, L, N), steps t (one per batch
  //! item) and conditions (B, L, d_f). Output has the shape of x_t.
  ag::Var forward(ag::Tape& tape,
                  const std::vector<ag::Var>& p,
                  const Tensor& x_t,
                  std::span<const int> t,
                  const Tensor& cond,
                  ForwardOptions opt = {}) const
  {
    if (x_t.rank() != 4 || x_t.dim(1) != 1) {
      throw ConfigError("denoiser input must be (B,1,L,N), got " + shape_string(x_t.shape));
    }
    const std::size_t batch = x_t.dim(0), len = x_t.dim(2), nw = x_t.dim(3);
    if (cfg_.mode == NetMode::univariate && nw != 1) {
      throw ConfigError("univariate denoiser expects one channel, got " + std::to_string(nw));
    }
    if (t.size() != batch) {
      throw ConfigError("one diffusion step per batch item required");
    }
    if (cond.rank() != 3 || cond.dim(0) != batch || cond.dim(1) != len ||
        cond.dim(2) != cfg_.cond_width) {
      throw ConfigError("condition tensor " + shape_string(cond.shape) + " does not match (" +
                        std::to_string(batch) + "," + std::to_string(len) + "," +
                        std::to_string(cfg_.cond_width) + ")");
    }
    const std::size_t m = cfg_.pad_multiple();
    const std::size_t lp = (len + m - 1) / m * m;

    // right-pad by edge replication
    Tensor xp({ batch, 1, lp, nw });
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t s = 0; s < lp; ++s) {
        const std::size_t src = std::min(s, len - 1);
        std::copy_n(x_t.ptr() + (b * len + src) * nw, nw, xp.ptr() + (b * lp + s) * nw);
      }
    }
    std::vector<Tensor> conds;
    conds.reserve(cfg_.depth + 1);
    {
      const std::size_t df = cfg_.cond_width;
      Tensor c0({ batch, lp, df });
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t s = 0; s < lp; ++s) {
          const std::size_t src = std::min(s, len - 1);
          std::copy_n(cond.ptr() + (b * len + src) * df, df, c0.ptr() + (b * lp + s) * df);
        }
      }
      conds.push_back(std::move(c0));
      for (std::size_t l = 1; l <= cfg_.depth; ++l) {
        const Tensor& prev = conds.back();
        const std::size_t rows = prev.dim(1) / 2;
        Tensor c({ batch, rows, df });
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t k = 0; k < df; ++k) {
              c.data[(b * rows + r) * df + k] = 0.5 * (prev.data[(b * 2 * rows + 2 * r) * df + k] +
                                                        prev.data[(b * 2 * rows + 2 * r + 1) * df + k]);
            }
          }
        }
        conds.push_back(std::move(c));
      }
    }

    const std::size_t e = cfg_.embed_width();
    Tensor temb({ batch, e });
    for (std::size_t b = 0; b < batch; ++b) {
      const auto v = embed_timestep(static_cast<double>(t[b]), e);
      std::copy(v.begin(), v.end(), temb.ptr() + b * e);
    }
    const ag::Var temb_act = ag::silu(tape, tape.constant(std::move(temb)));

    auto check = [&](ag::Var v, const std::string& where) {
      if (!tape.value(v).all_finite()) {
        throw NumericError("non-finite activation in " + where);
      }
      return v;
    };

    ag::Var h = ag::conv2d(tape, tape.constant(std::move(xp)), p[layout_.in_w], p[layout_.in_b]);
    std::vector<ag::Var> skips;
    for (std::size_t l = 0; l < cfg_.depth; ++l) {
      h = check(block(tape, p, layout_.enc[l], h, temb_act, conds[l], opt), "encoder level " + std::to_string(l));
      skips.push_back(h);
      h = ag::conv2d(tape, h, p[layout_.down_w[l]], p[layout_.down_b[l]], 2);
    }
    h = check(block(tape, p, layout_.mid, h, temb_act, conds[cfg_.depth], opt), "middle block");
    for (std::size_t l = cfg_.depth; l-- > 0;) {
      h = ag::upsample_time(tape, h);
      h = ag::conv2d(tape, h, p[layout_.up_w[l]], p[layout_.up_b[l]]);
      h = ag::concat_channels(tape, h, skips[l]);
      h = check(block(tape, p, layout_.dec[l], h, temb_act, conds[l], opt), "decoder level " + std::to_string(l));
    }
    h = ag::group_norm(tape, h, p[layout_.out_g], p[layout_.out_b], groups(cfg_.width));
    h = ag::silu(tape, h);
    h = ag::conv2d(tape, h, p[layout_.out_w], p[layout_.out_bias]);
    return check(ag::crop_time(tape, h, len), "output layer");
  }

  //! Inference-only forward pass.
  Tensor predict(const Tensor& x_t, std::span<const int> t, const Tensor& cond) const
  {
    ag::Tape tape(false);
    const auto vars = bind(tape);
    return tape.value(forward(tape, vars, x_t, t, cond));
  }

  //! One residual block: GN, SiLU, conv; timestep projection; attention
  //! residual; GN, SiLU, dropout, conv; shortcut.
  ag::Var block(ag::Tape& tape,
                const std::vector<ag::Var>& p,
                const BlockLayout& bl,
                ag::Var x,
                ag::Var temb_act,
                const Tensor& cond,
                ForwardOptions opt = {}) const
  {
    ag::Var h = ag::group_norm(tape, x, p[bl.gn1_g], p[bl.gn1_b], groups(bl.in));
    h = ag::silu(tape, h);
    h = ag::conv2d(tape, h, p[bl.conv1_w], p[bl.conv1_b]);
    h = ag::add_channel_vector(tape, h, ag::linear(tape, temb_act, p[bl.temb_w], p[bl.temb_b]));
    h = ag::add(tape, h, ag::cross_attention(tape, h, cond, p[bl.wq], p[bl.wk], p[bl.wv], p[bl.wo], p[bl.bo],
                                             cfg_.heads, opt.trace));
    h = ag::group_norm(tape, h, p[bl.gn2_g], p[bl.gn2_b], groups(bl.out));
    h = ag::silu(tape, h);
    if (opt.dropout_rng != nullptr && cfg_.dropout > 0.0) {
      h = ag::dropout(tape, h, cfg_.dropout, *opt.dropout_rng);
    }
    h = ag::conv2d(tape, h, p[bl.conv2_w], p[bl.conv2_b]);
    ag::Var shortcut = bl.skip_w ? ag::conv2d(tape, x, p[*bl.skip_w], p[*bl.skip_b]) : x;
    return ag::add(tape, h, shortcut);
  }

  //! min(8, C), lowered until it divides C.
  static std::size_t groups(std::size_t channels)
  {
    for (std::size_t g = std::min<std::size_t>(8, channels); g > 1; --g) {
      if (channels % g == 0) return g;
    }
    return 1;
  }

private:
  BlockLayout add_block(const std::string& name, std::size_t in, std::size_t out)
  {
    const std::size_t kt = 3, kn = cfg_.kernel_w(), df = cfg_.cond_width, e = cfg_.embed_width();
    BlockLayout b;
    b.in = in;
    b.out = out;
    b.gn1_g = params_.add(name + ".gn1.gamma", { in }, InitKind::ones);
    b.gn1_b = params_.add(name + ".gn1.beta", { in }, InitKind::zeros);
    b.conv1_w = params_.add(name + ".conv1.w", { out, in, kt, kn }, InitKind::conv);
    b.conv1_b = params_.add(name + ".conv1.b", { out }, InitKind::zeros);
    b.temb_w = params_.add(name + ".temb.w", { e, out }, InitKind::linear);
    b.temb_b = params_.add(name + ".temb.b", { out }, InitKind::zeros);
    b.wq = params_.add(name + ".attn.wq", { out, out }, InitKind::linear);
    b.wk = params_.add(name + ".attn.wk", { df, out }, InitKind::linear);
    b.wv = params_.add(name + ".attn.wv", { df, out }, InitKind::linear);
    b.wo = params_.add(name + ".attn.wo", { out, out }, InitKind::linear);
    b.bo = params_.add(name + ".attn.bo", { out }, InitKind::zeros);
    b.gn2_g = params_.add(name + ".gn2.gamma", { out }, InitKind::ones);
    b.gn2_b = params_.add(name + ".gn2.beta", { out }, InitKind::zeros);
    b.conv2_w = params_.add(name + ".conv2.w", { out, out, kt, kn }, InitKind::conv);
    b.conv2_b = params_.add(name + ".conv2.b", { out }, InitKind::zeros);
    if (in != out) {
      b.skip_w = params_.add(name + ".skip.w", { out, in, 1, 1 }, InitKind::conv);
      b.skip_b = params_.add(name + ".skip.b", { out }, InitKind::zeros);
    }
    return b;
  }

  void build_layout()
  {
    const std::size_t kt = 3, kn = cfg_.kernel_w(), d = cfg_.depth;
    const std::size_t w0 = cfg_.level_width(0);
    layout_.in_w = params_.add("in.w", { w0, 1, kt, kn }, InitKind::conv);
    layout_.in_b = params_.add("in.b", { w0 }, InitKind::zeros);
    std::size_t c = w0;
    for (std::size_t l = 0; l < d; ++l) {
      const std::size_t wl = cfg_.level_width(l);
      layout_.enc.push_back(add_block("enc" + std::to_string(l), c, wl));
      layout_.down_w.push_back(params_.add("down" + std::to_string(l) + ".w", { wl, wl, kt, kn }, InitKind::conv));
      layout_.down_b.push_back(params_.add("down" + std::to_string(l) + ".b", { wl }, InitKind::zeros));
      c = wl;
    }
    layout_.mid = add_block("mid", c, c);
    layout_.up_w.resize(d);
    layout_.up_b.resize(d);
    layout_.dec.resize(d);
    for (std::size_t l = d; l-- > 0;) {
      const std::size_t wl = cfg_.level_width(l);
      layout_.up_w[l] = params_.add("up" + std::to_string(l) + ".w", { c, c, kt, kn }, InitKind::conv);
      layout_.up_b[l] = params_.add("up" + std::to_string(l) + ".b", { c }, InitKind::zeros);
      layout_.dec[l] = add_block("dec" + std::to_string(l), c + wl, wl);
      c = wl;
    }
    layout_.out_g = params_.add("out.gn.gamma", { c }, InitKind::ones);
    layout_.out_b = params_.add("out.gn.beta", { c }, InitKind::zeros);
    layout_.out_w = params_.add("out.conv.w", { 1, c, kt, kn }, InitKind::zeros);
    layout_.out_bias = params_.add("out.conv.b", { 1 }, InitKind::zeros);
  }

  NetConfig cfg_;
  NetLayout layout_;
  DenoiserParams params_;
};

} // namespace emfusion
