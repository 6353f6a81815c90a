#include "timnet/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include "timnet/binio.hpp"

namespace timnet::model {

using diff::DiffValue;
using diff::Mode;

Variant variant_from_string(const std::string& s) {
  if (s == "full") return Variant::Full;
  if (s == "tcn" || s == "tcn_baseline") return Variant::TcnBaseline;
  if (s == "no-bd" || s == "no_bd") return Variant::NoBd;
  if (s == "no-ms" || s == "no_ms") return Variant::NoMs;
  if (s == "no-df" || s == "no_df") return Variant::NoDf;
  throw ValidationError("unknown model variant '" + s +
                        "' (expected full|tcn|no-bd|no-ms|no-df)");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::TcnBaseline: return "tcn";
    case Variant::NoBd: return "no-bd";
    case Variant::NoMs: return "no-ms";
    case Variant::NoDf: return "no-df";
  }
  return "full";
}

void ModelConfig::validate() const {
  if (n_tabs < 1 || n_tabs > 30) throw ValidationError("model config: n_tabs must be in [1, 30]");
  if (kernel_size < 1) throw ValidationError("model config: kernel_size must be >= 1");
  if (channels < 1 || in_channels < 1)
    throw ValidationError("model config: channel counts must be >= 1");
  if (n_classes < 1) throw ValidationError("model config: n_classes must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0)
    throw ValidationError("model config: dropout must be in [0, 1)");
}

namespace {

Tensor glorot_uniform(const std::vector<std::size_t>& shape, std::size_t fan_in,
                      std::size_t fan_out, RngStream& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.next_uniform(-limit, limit);
  return t;
}

SubBlockParams make_sub_block(const ModelConfig& cfg, const std::string& prefix, RngStream* rng) {
  const std::size_t k = cfg.kernel_size, c = cfg.channels;
  SubBlockParams sb;
  Tensor w = rng ? glorot_uniform({k, c, c}, k * c, k * c, *rng) : Tensor({k, c, c});
  sb.conv_w = diff::parameter(std::move(w), prefix + ".conv.w");
  sb.conv_b = diff::parameter(Tensor({c}), prefix + ".conv.b");
  sb.bn = diff::make_batch_norm(c, prefix + ".bn");
  return sb;
}

DirectionParams make_direction(const ModelConfig& cfg, const std::string& prefix, RngStream* rng) {
  const std::size_t cin = cfg.in_channels, c = cfg.channels;
  DirectionParams dir;
  Tensor ew = rng ? glorot_uniform({1, cin, c}, cin, c, *rng) : Tensor({1, cin, c});
  dir.entry_w = diff::parameter(std::move(ew), prefix + ".entry.w");
  dir.entry_b = diff::parameter(Tensor({c}), prefix + ".entry.b");
  dir.tabs.reserve(cfg.n_tabs);
  for (std::size_t j = 1; j <= cfg.n_tabs; ++j) {
    const std::string tp = prefix + ".tab" + std::to_string(j);
    TabParams tab;
    tab.sub1 = make_sub_block(cfg, tp + ".sub1", rng);
    tab.sub2 = make_sub_block(cfg, tp + ".sub2", rng);
    dir.tabs.push_back(std::move(tab));
  }
  return dir;
}

TimNetParams make_params(const ModelConfig& cfg, RngStream* rng) {
  cfg.validate();
  TimNetParams p;
  p.fwd = make_direction(cfg, "fwd", rng);
  p.bwd = make_direction(cfg, "bwd", rng);
  p.w_drf = diff::parameter(Tensor({cfg.n_tabs}, 1.0 / static_cast<double>(cfg.n_tabs)),
                            "fusion.w_drf");
  const std::size_t c = cfg.channels, k = cfg.n_classes;
  Tensor hw = rng ? glorot_uniform({c, k}, c, k, *rng) : Tensor({c, k});
  p.head_w = diff::parameter(std::move(hw), "head.w");
  p.head_b = diff::parameter(Tensor({k}), "head.b");
  return p;
}

void push_sub_block(std::vector<DiffValue>& out, SubBlockParams& sb) {
  out.push_back(sb.conv_w);
  out.push_back(sb.conv_b);
  out.push_back(sb.bn.gamma);
  out.push_back(sb.bn.beta);
}

void push_sub_block_state(std::vector<NamedTensorRef>& out, SubBlockParams& sb) {
  out.push_back({sb.conv_w.name(), &sb.conv_w.value()});
  out.push_back({sb.conv_b.name(), &sb.conv_b.value()});
  out.push_back({sb.bn.gamma.name(), &sb.bn.gamma.value()});
  out.push_back({sb.bn.beta.name(), &sb.bn.beta.value()});
  out.push_back({sb.bn.gamma.name().substr(0, sb.bn.gamma.name().size() - 6) + ".running_mean",
                 &sb.bn.running_mean});
  out.push_back({sb.bn.gamma.name().substr(0, sb.bn.gamma.name().size() - 6) + ".running_var",
                 &sb.bn.running_var});
}

}  // namespace

TimNetParams init_timnet(const ModelConfig& cfg, RngStream& rng) { return make_params(cfg, &rng); }

TimNetParams clone_params(TimNetParams& src, const ModelConfig& cfg) {
  TimNetParams dst = make_params(cfg, nullptr);
  const auto src_state = src.named_state();
  auto dst_state = dst.named_state();
  for (std::size_t i = 0; i < src_state.size(); ++i) *dst_state[i].tensor = *src_state[i].tensor;
  return dst;
}

std::vector<DiffValue> TimNetParams::trainable(Variant variant) {
  std::vector<DiffValue> out;
  auto push_dir = [&out](DirectionParams& d) {
    out.push_back(d.entry_w);
    out.push_back(d.entry_b);
    for (auto& tab : d.tabs) {
      push_sub_block(out, tab.sub1);
      push_sub_block(out, tab.sub2);
    }
  };
  push_dir(fwd);
  if (variant != Variant::NoBd) push_dir(bwd);
  if (variant != Variant::NoDf && variant != Variant::NoMs) out.push_back(w_drf);
  out.push_back(head_w);
  out.push_back(head_b);
  return out;
}

std::vector<NamedTensorRef> TimNetParams::named_state() {
  std::vector<NamedTensorRef> out;
  auto push_dir = [&out](DirectionParams& d) {
    out.push_back({d.entry_w.name(), &d.entry_w.value()});
    out.push_back({d.entry_b.name(), &d.entry_b.value()});
    for (auto& tab : d.tabs) {
      push_sub_block_state(out, tab.sub1);
      push_sub_block_state(out, tab.sub2);
    }
  };
  push_dir(fwd);
  push_dir(bwd);
  out.push_back({w_drf.name(), &w_drf.value()});
  out.push_back({head_w.name(), &head_w.value()});
  out.push_back({head_b.name(), &head_b.value()});
  return out;
}

namespace {

DiffValue sub_block_forward(const DiffValue& x, SubBlockParams& p, std::size_t dilation,
                            double dropout, Mode mode, RngStream& rng, bool update_running) {
  DiffValue h = diff::dilated_causal_conv1d(x, p.conv_w, p.conv_b, dilation);
  h = diff::batch_norm(h, p.bn, mode, update_running);
  h = diff::relu(h);
  return diff::spatial_dropout(h, dropout, rng, mode);
}

}  // namespace

std::pair<DiffValue, DiffValue> tab_forward(const DiffValue& x, TabParams& p, std::size_t dilation,
                                            double dropout, Mode mode, RngStream& rng,
                                            bool update_running) {
  DiffValue s = sub_block_forward(x, p.sub1, dilation, dropout, mode, rng, update_running);
  s = sub_block_forward(s, p.sub2, dilation, dropout, mode, rng, update_running);
  DiffValue attn = diff::sigmoid(s);
  return {diff::mul(attn, x), attn};
}

diff::DiffValue dynamic_fusion(std::span<const DiffValue> g_list, const DiffValue& w_drf) {
  return diff::weighted_sum(g_list, w_drf);
}

std::size_t receptive_field(std::size_t n, std::size_t kernel_size) {
  return 1 + 2 * (kernel_size - 1) * ((std::size_t{1} << n) - 1);
}

std::size_t trainable_param_count(const ModelConfig& cfg) {
  const std::size_t k = cfg.kernel_size, c = cfg.channels;
  const std::size_t per_sub = k * c * c + c + 2 * c;  // conv w+b, bn gamma+beta
  const std::size_t per_dir = (cfg.in_channels * c + c) + cfg.n_tabs * 2 * per_sub;
  std::size_t total = per_dir * (cfg.variant == Variant::NoBd ? 1 : 2);
  if (cfg.variant != Variant::NoDf && cfg.variant != Variant::NoMs) total += cfg.n_tabs;
  total += c * cfg.n_classes + cfg.n_classes;
  return total;
}

ForwardTrace forward(const DiffValue& x, TimNetParams& params, const ModelConfig& cfg, Mode mode,
                     RngStream& rng, bool update_running) {
  cfg.validate();
  if (x.value().rank() != 3) throw ValidationError("forward: input must be [B,T,C]");
  if (x.value().dim(2) != cfg.in_channels)
    throw ValidationError("forward: input has " + std::to_string(x.value().dim(2)) +
                          " channels, config expects " + std::to_string(cfg.in_channels));
  if (cfg.input_T != 0 && x.value().dim(1) != cfg.input_T)
    throw ValidationError("forward: input has T=" + std::to_string(x.value().dim(1)) +
                          ", config expects T=" + std::to_string(cfg.input_T));

  const bool gated = cfg.variant != Variant::TcnBaseline;
  ForwardTrace trace;

  auto run_direction = [&](DirectionParams& dir, const DiffValue& input,
                           std::vector<DiffValue>& feats, std::vector<DiffValue>& attns) {
    DiffValue f = diff::dilated_causal_conv1d(input, dir.entry_w, dir.entry_b, 1);
    for (std::size_t j = 1; j <= cfg.n_tabs; ++j) {
      TabParams& tab = dir.tabs[j - 1];
      const std::size_t d = cfg.dilation_of(j);
      if (gated) {
        auto [next, attn] = tab_forward(f, tab, d, cfg.dropout, mode, rng, update_running);
        f = next;
        attns.push_back(attn);
      } else {
        // plain residual TCN block: sub-blocks plus identity skip, ReLU output
        DiffValue h = sub_block_forward(f, tab.sub1, d, cfg.dropout, mode, rng, update_running);
        h = sub_block_forward(h, tab.sub2, d, cfg.dropout, mode, rng, update_running);
        f = diff::relu(diff::add(h, f));
      }
      feats.push_back(f);
    }
  };

  run_direction(params.fwd, x, trace.feat_fwd, trace.attn_fwd);
  if (cfg.variant != Variant::NoBd) {
    DiffValue reversed = diff::time_reverse(x);
    run_direction(params.bwd, reversed, trace.feat_bwd, trace.attn_bwd);
  }

  trace.g.reserve(cfg.n_tabs);
  for (std::size_t j = 0; j < cfg.n_tabs; ++j) {
    DiffValue combined = cfg.variant == Variant::NoBd
                             ? trace.feat_fwd[j]
                             : diff::add(trace.feat_fwd[j], trace.feat_bwd[j]);
    trace.g.push_back(diff::temporal_mean(combined));
  }

  trace.g_drf = cfg.variant == Variant::NoMs ? trace.g.back()
                                             : dynamic_fusion(trace.g, params.w_drf);
  trace.logits = diff::dense(trace.g_drf, params.head_w, params.head_b);
  trace.probs = diff::softmax(trace.logits);
  return trace;
}

// --- checkpointing -----------------------------------------------------------

namespace {

[[noreturn]] void corrupt(const std::filesystem::path& path, const std::string& why) {
  throw RuntimeFailure("corrupt checkpoint " + path.string() + ": " + why);
}

void write_string(std::ostream& os, const std::string& s) {
  io::write_u32_le(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

bool read_string(std::istream& is, std::string& s) {
  std::uint32_t len = 0;
  if (!io::read_u32_le(is, len)) return false;
  s.resize(len);
  return static_cast<bool>(is.read(s.data(), len));
}

}  // namespace

void checkpoint_save(TimNetParams& params, const ModelConfig& cfg,
                     const std::vector<std::string>& labels, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw RuntimeFailure("cannot open " + path.string() + " for writing");
  os.write("TIMC", 4);
  io::write_u32_le(os, kCheckpointVersion);
  io::write_u32_le(os, cfg.n_tabs);
  io::write_u32_le(os, cfg.kernel_size);
  io::write_u32_le(os, cfg.channels);
  io::write_u32_le(os, cfg.in_channels);
  io::write_u32_le(os, cfg.n_classes);
  io::write_u32_le(os, cfg.input_T);
  io::write_u32_le(os, static_cast<std::uint32_t>(cfg.variant));
  io::write_f64_le(os, cfg.dropout);
  io::write_u32_le(os, static_cast<std::uint32_t>(labels.size()));
  for (const auto& label : labels) write_string(os, label);

  const auto state = params.named_state();
  io::write_u32_le(os, static_cast<std::uint32_t>(state.size()));
  for (const auto& ref : state) {
    write_string(os, ref.name);
    io::write_u32_le(os, static_cast<std::uint32_t>(ref.tensor->rank()));
    for (std::size_t d = 0; d < ref.tensor->rank(); ++d)
      io::write_u32_le(os, static_cast<std::uint32_t>(ref.tensor->dim(d)));
    for (double v : ref.tensor->flat()) io::write_f64_le(os, v);
  }
  if (!os) throw RuntimeFailure("short write to " + path.string());
}

Checkpoint checkpoint_load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw RuntimeFailure("cannot open checkpoint " + path.string());
  char magic[4];
  if (!is.read(magic, 4)) corrupt(path, "truncated magic");
  if (std::memcmp(magic, "TIMC", 4) != 0) corrupt(path, "bad magic");
  std::uint32_t version = 0;
  if (!io::read_u32_le(is, version)) corrupt(path, "truncated header");
  if (version != kCheckpointVersion)
    throw RuntimeFailure("checkpoint " + path.string() + " has version " +
                         std::to_string(version) + ", expected " +
                         std::to_string(kCheckpointVersion));

  Checkpoint ckpt;
  std::uint32_t variant_raw = 0;
  ModelConfig& cfg = ckpt.cfg;
  if (!io::read_u32_le(is, cfg.n_tabs) || !io::read_u32_le(is, cfg.kernel_size) ||
      !io::read_u32_le(is, cfg.channels) || !io::read_u32_le(is, cfg.in_channels) ||
      !io::read_u32_le(is, cfg.n_classes) || !io::read_u32_le(is, cfg.input_T) ||
      !io::read_u32_le(is, variant_raw) || !io::read_f64_le(is, cfg.dropout))
    corrupt(path, "truncated config block");
  if (variant_raw > static_cast<std::uint32_t>(Variant::NoDf)) corrupt(path, "bad variant tag");
  cfg.variant = static_cast<Variant>(variant_raw);

  std::uint32_t n_labels = 0;
  if (!io::read_u32_le(is, n_labels)) corrupt(path, "truncated label block");
  ckpt.labels.resize(n_labels);
  for (auto& label : ckpt.labels)
    if (!read_string(is, label)) corrupt(path, "truncated label block");

  std::uint32_t n_records = 0;
  if (!io::read_u32_le(is, n_records)) corrupt(path, "truncated record count");
  std::unordered_map<std::string, Tensor> records;
  for (std::uint32_t r = 0; r < n_records; ++r) {
    std::string name;
    if (!read_string(is, name)) corrupt(path, "truncated record name");
    std::uint32_t rank = 0;
    if (!io::read_u32_le(is, rank) || rank > 4) corrupt(path, "bad record rank");
    std::vector<std::size_t> dims(rank);
    for (auto& d : dims) {
      std::uint32_t v = 0;
      if (!io::read_u32_le(is, v)) corrupt(path, "truncated record dims");
      d = v;
    }
    Tensor t(dims);
    for (std::size_t i = 0; i < t.numel(); ++i)
      if (!io::read_f64_le(is, t[i])) corrupt(path, "truncated record data");
    records.emplace(std::move(name), std::move(t));
  }

  ckpt.params = make_params(cfg, nullptr);
  for (auto& ref : ckpt.params.named_state()) {
    auto it = records.find(ref.name);
    if (it == records.end()) corrupt(path, "missing parameter record '" + ref.name + "'");
    if (it->second.shape() != ref.tensor->shape())
      corrupt(path, "parameter '" + ref.name + "' shape disagrees with the config header");
    *ref.tensor = std::move(it->second);
    records.erase(it);
  }
  if (!records.empty()) corrupt(path, "unexpected extra parameter records");
  return ckpt;
}

Checkpoint checkpoint_load_expect(const std::filesystem::path& path, const ModelConfig& expected) {
  Checkpoint ckpt = checkpoint_load(path);
  const ModelConfig& got = ckpt.cfg;
  auto mismatch = [&](const std::string& field, std::uint32_t a, std::uint32_t b) {
    throw ValidationError("checkpoint " + path.string() + ": " + field + " is " +
                          std::to_string(a) + " but the requested config has " +
                          std::to_string(b));
  };
  if (got.n_tabs != expected.n_tabs) mismatch("n_tabs", got.n_tabs, expected.n_tabs);
  if (got.kernel_size != expected.kernel_size)
    mismatch("kernel_size", got.kernel_size, expected.kernel_size);
  if (got.channels != expected.channels) mismatch("channels", got.channels, expected.channels);
  if (got.in_channels != expected.in_channels)
    mismatch("in_channels", got.in_channels, expected.in_channels);
  if (got.n_classes != expected.n_classes)
    mismatch("n_classes", got.n_classes, expected.n_classes);
  return ckpt;
}

}  // namespace timnet::model
