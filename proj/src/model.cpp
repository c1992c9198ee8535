#include "lkf/model.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace lkf {

void LkraConfig::validate() const {
  int prev = 0;
  for (int k : kernels) {
    if (k < 1 || k % 2 == 0) {
      throw std::invalid_argument("lkra: kernel sizes must be odd, got " + std::to_string(k));
    }
    if (k <= prev) {
      throw std::invalid_argument("lkra: kernel sizes must be strictly increasing");
    }
    prev = k;
  }
  if (kernels.empty() && !use_local_pair) {
    throw std::invalid_argument("lkra: kernel list may be empty only with the local 7x1/1x7 pair");
  }
}

void LkformerConfig::validate() const {
  if (channels < 1) throw std::invalid_argument("config: channels must be >= 1");
  if (rtb_count < 1 || tl_count < 1) {
    throw std::invalid_argument("config: rtb_count and tl_count must be >= 1");
  }
  if (scale != 2 && scale != 4) {
    throw std::invalid_argument("config: scale must be 2 or 4, got " + std::to_string(scale));
  }
  if (in_channels < 1) throw std::invalid_argument("config: in_channels must be >= 1");
  if (gpfn_expansion < 1) throw std::invalid_argument("config: gpfn_expansion must be >= 1");
  if (min_input < 1) throw std::invalid_argument("config: min_input must be >= 1");
  lkra.validate();
}

// ---------------------------------------------------------------------------
// Construction

namespace {

LkraParams build_lkra(const LkformerConfig& cfg, Rng& rng) {
  const int c = cfg.channels;
  LkraParams p;
  p.proj_in = make_conv(c, c, 1, 1, 1, rng);
  if (cfg.lkra.use_local_pair) p.local = make_separable_dwc(c, 7, rng);
  for (int k : cfg.lkra.kernels) {
    RdbParams rdb;
    rdb.sep = make_separable_dwc(c, k, rng);
    p.rdbs.push_back(std::move(rdb));
  }
  p.value = make_conv(c, c, 1, 1, 1, rng);
  p.proj_out = make_conv(c, c, 1, 1, 1, rng);
  return p;
}

GpfnParams build_gpfn(const LkformerConfig& cfg, Rng& rng) {
  const int c = cfg.channels;
  const int e = c * cfg.gpfn_expansion;
  GpfnParams p;
  p.expand = make_conv(c, e, 1, 1, 1, rng);
  p.value = make_conv(e, e, 1, 1, 1, rng);
  p.attn_point = make_conv(e, e, 1, 1, 1, rng);
  p.attn_dw = make_conv(e, e, 3, 3, e, rng);
  p.proj_out = make_conv(e, c, 1, 1, 1, rng);
  return p;
}

}  // namespace

LkformerParams build_model(const LkformerConfig& cfg, Rng& rng) {
  cfg.validate();
  const int c = cfg.channels;
  LkformerParams p;
  p.shallow = make_conv(cfg.in_channels, c, 3, 3, 1, rng);
  for (int i = 0; i < cfg.rtb_count; ++i) {
    RtbParams rtb;
    for (int j = 0; j < cfg.tl_count; ++j) {
      TlParams tl;
      tl.ln1 = make_layer_norm(c);
      tl.lkra = build_lkra(cfg, rng);
      tl.ln2 = make_layer_norm(c);
      tl.gpfn = build_gpfn(cfg, rng);
      rtb.tls.push_back(std::move(tl));
    }
    rtb.fuse = make_conv(c, c, 3, 3, 1, rng);
    p.rtbs.push_back(std::move(rtb));
  }
  p.fusion = make_conv(c * cfg.rtb_count, c, 1, 1, 1, rng);
  for (int s = 0; s < cfg.upsample_stages(); ++s) {
    p.ups.push_back(make_conv(c, 4 * c, 3, 3, 1, rng));
  }
  p.out = make_conv(c, cfg.in_channels, 3, 3, 1, rng);
  return p;
}

// ---------------------------------------------------------------------------
// Canonical enumeration

namespace {

using Visit = std::function<void(const std::string&, Tensor&)>;

void visit_conv(const std::string& prefix, Conv2dParams& c, const Visit& fn) {
  fn(prefix + ".weight", c.weight);
  if (c.has_bias()) fn(prefix + ".bias", c.bias);
}

void visit_sep(const std::string& prefix, SeparableDwcParams& s, const Visit& fn) {
  visit_conv(prefix + ".col", s.col, fn);
  visit_conv(prefix + ".row", s.row, fn);
}

void visit_all(LkformerParams& p, const Visit& fn) {
  visit_conv("shallow", p.shallow, fn);
  for (std::size_t i = 0; i < p.rtbs.size(); ++i) {
    const std::string rp = "rtb" + std::to_string(i);
    RtbParams& rtb = p.rtbs[i];
    for (std::size_t j = 0; j < rtb.tls.size(); ++j) {
      const std::string tp = rp + ".tl" + std::to_string(j);
      TlParams& tl = rtb.tls[j];
      fn(tp + ".ln1.gamma", tl.ln1.gamma);
      fn(tp + ".ln1.beta", tl.ln1.beta);
      visit_conv(tp + ".lkra.proj_in", tl.lkra.proj_in, fn);
      if (tl.lkra.local.col.weight.defined()) visit_sep(tp + ".lkra.local", tl.lkra.local, fn);
      for (std::size_t m = 0; m < tl.lkra.rdbs.size(); ++m) {
        visit_sep(tp + ".lkra.rdb" + std::to_string(m), tl.lkra.rdbs[m].sep, fn);
      }
      visit_conv(tp + ".lkra.value", tl.lkra.value, fn);
      visit_conv(tp + ".lkra.proj_out", tl.lkra.proj_out, fn);
      fn(tp + ".ln2.gamma", tl.ln2.gamma);
      fn(tp + ".ln2.beta", tl.ln2.beta);
      visit_conv(tp + ".gpfn.expand", tl.gpfn.expand, fn);
      visit_conv(tp + ".gpfn.value", tl.gpfn.value, fn);
      visit_conv(tp + ".gpfn.attn_point", tl.gpfn.attn_point, fn);
      visit_conv(tp + ".gpfn.attn_dw", tl.gpfn.attn_dw, fn);
      visit_conv(tp + ".gpfn.proj_out", tl.gpfn.proj_out, fn);
    }
    visit_conv(rp + ".fuse", rtb.fuse, fn);
  }
  visit_conv("fusion", p.fusion, fn);
  for (std::size_t s = 0; s < p.ups.size(); ++s) {
    visit_conv("up" + std::to_string(s), p.ups[s], fn);
  }
  visit_conv("out", p.out, fn);
}

}  // namespace

void for_each_param(LkformerParams& p, const Visit& fn) { visit_all(p, fn); }

void for_each_param(const LkformerParams& p,
                    const std::function<void(const std::string&, const Tensor&)>& fn) {
  visit_all(const_cast<LkformerParams&>(p),
            [&fn](const std::string& name, Tensor& t) { fn(name, t); });
}

// ---------------------------------------------------------------------------
// Forwards

Tensor rdb_forward(const Tensor& x, const RdbParams& p, bool inner_residual) {
  Tensor t = separable_dwc(x, p.sep);
  return inner_residual ? silu(add(x, t)) : silu(t);
}

Tensor lkra_forward(const Tensor& h, const LkraParams& p, const LkraConfig& cfg) {
  cfg.validate();
  Tensor a = silu(conv2d(h, p.proj_in));
  if (cfg.use_local_pair) a = separable_dwc(a, p.local);
  for (std::size_t i = 0; i < p.rdbs.size(); ++i) {
    a = rdb_forward(a, p.rdbs[i], cfg.inner_residual);
  }
  Tensor gated = mul(conv2d(h, p.value), a);
  return conv2d(gated, p.proj_out);
}

Tensor gpfn_forward(const Tensor& f, const GpfnParams& p) {
  Tensor h = silu(conv2d(f, p.expand));
  Tensor attn = conv2d(conv2d(h, p.attn_point), p.attn_dw);  // pixel attention map
  Tensor gated = mul(conv2d(h, p.value), attn);
  return conv2d(gated, p.proj_out);
}

Tensor tl_forward(const Tensor& x, const TlParams& p, const LkraConfig& cfg) {
  Tensor y = add(x, lkra_forward(layer_norm(x, p.ln1), p.lkra, cfg));
  return add(y, gpfn_forward(layer_norm(y, p.ln2), p.gpfn));
}

Tensor rtb_forward(const Tensor& x, const RtbParams& p, const LkraConfig& cfg) {
  Tensor t = x;
  for (const TlParams& tl : p.tls) t = tl_forward(t, tl, cfg);
  return add(x, conv2d(t, p.fuse));
}

Tensor lkformer_forward(const Tensor& lr, const LkformerConfig& cfg, const LkformerParams& p) {
  cfg.validate();
  if (!lr.defined() || lr.ndim() != 4) {
    throw std::invalid_argument("lkformer: input must be 4-D (B,C,H,W)");
  }
  if (lr.dim(1) != cfg.in_channels) {
    throw std::invalid_argument("lkformer: input has " + std::to_string(lr.dim(1)) +
                                " channels, config expects " + std::to_string(cfg.in_channels));
  }
  if (lr.dim(2) < cfg.min_input || lr.dim(3) < cfg.min_input) {
    throw std::invalid_argument("lkformer: input spatial dims must be >= " +
                                std::to_string(cfg.min_input));
  }
  Tensor shallow = conv2d(lr, p.shallow);
  Tensor feat = shallow;
  std::vector<Tensor> block_outs;
  block_outs.reserve(p.rtbs.size());
  for (const RtbParams& rtb : p.rtbs) {
    feat = rtb_forward(feat, rtb, cfg.lkra);
    block_outs.push_back(feat);
  }
  Tensor fused = conv2d(concat_channels(block_outs), p.fusion);
  Tensor g = add(fused, shallow);  // global residual over the feature trunk
  for (const Conv2dParams& up : p.ups) {
    g = pixel_shuffle(conv2d(g, up), 2);
  }
  return conv2d(g, p.out);
}

// ---------------------------------------------------------------------------
// Config record

std::string serialize_config(const LkformerConfig& cfg) {
  std::ostringstream os;
  os << "channels=" << cfg.channels << '\n';
  os << "rtb_count=" << cfg.rtb_count << '\n';
  os << "tl_count=" << cfg.tl_count << '\n';
  os << "scale=" << cfg.scale << '\n';
  os << "in_channels=" << cfg.in_channels << '\n';
  os << "gpfn_expansion=" << cfg.gpfn_expansion << '\n';
  os << "min_input=" << cfg.min_input << '\n';
  os << "kernels=";
  for (std::size_t i = 0; i < cfg.lkra.kernels.size(); ++i) {
    if (i) os << ',';
    os << cfg.lkra.kernels[i];
  }
  os << '\n';
  os << "use_local_pair=" << (cfg.lkra.use_local_pair ? 1 : 0) << '\n';
  os << "inner_residual=" << (cfg.lkra.inner_residual ? 1 : 0) << '\n';
  return os.str();
}

LkformerConfig parse_config(const std::string& text) {
  LkformerConfig cfg;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("config: malformed line '" + line + "'");
    }
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "channels") cfg.channels = std::stoi(val);
    else if (key == "rtb_count") cfg.rtb_count = std::stoi(val);
    else if (key == "tl_count") cfg.tl_count = std::stoi(val);
    else if (key == "scale") cfg.scale = std::stoi(val);
    else if (key == "in_channels") cfg.in_channels = std::stoi(val);
    else if (key == "gpfn_expansion") cfg.gpfn_expansion = std::stoi(val);
    else if (key == "min_input") cfg.min_input = std::stoi(val);
    else if (key == "use_local_pair") cfg.lkra.use_local_pair = std::stoi(val) != 0;
    else if (key == "inner_residual") cfg.lkra.inner_residual = std::stoi(val) != 0;
    else if (key == "kernels") {
      cfg.lkra.kernels.clear();
      std::istringstream ks(val);
      std::string item;
      while (std::getline(ks, item, ',')) {
        if (!item.empty()) cfg.lkra.kernels.push_back(std::stoi(item));
      }
    } else {
      throw std::runtime_error("config: unknown key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// Checkpoint I/O

namespace {

constexpr char kMagic[4] = {'L', 'K', 'F', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw std::runtime_error("checkpoint: truncated file");
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

double get_f64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) {
    throw std::runtime_error("checkpoint: truncated file");
  }
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const LkformerConfig& cfg,
                     const LkformerParams& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  os.write(kMagic, 4);
  const std::string config = serialize_config(cfg);
  put_u32(os, static_cast<std::uint32_t>(config.size()));
  os.write(config.data(), static_cast<std::streamsize>(config.size()));
  for_each_param(params, [&os](const std::string& name, const Tensor& t) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<std::uint32_t>(t.ndim()));
    for (int d : t.shape()) put_u32(os, static_cast<std::uint32_t>(d));
    const double* p = t.data();
    for (std::size_t i = 0; i < t.numel(); ++i) put_f64(os, p[i]);
  });
  if (!os) throw std::runtime_error("checkpoint: write to '" + path + "' failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("checkpoint: bad magic; not an LKF1 checkpoint");
  }
  const std::uint32_t config_len = get_u32(is);
  std::string config(config_len, '\0');
  if (!is.read(config.data(), config_len)) {
    throw std::runtime_error("checkpoint: truncated file");
  }

  Checkpoint ckpt;
  ckpt.config = parse_config(config);
  Rng rng(0);
  ckpt.params = build_model(ckpt.config, rng);

  std::map<std::string, Tensor*> slots;
  for_each_param(ckpt.params, [&slots](const std::string& name, Tensor& t) {
    slots[name] = &t;
  });

  std::map<std::string, bool> seen;
  while (true) {
    is.peek();
    if (is.eof()) break;
    const std::uint32_t name_len = get_u32(is);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) {
      throw std::runtime_error("checkpoint: truncated file");
    }
    const std::uint32_t ndim = get_u32(is);
    std::vector<int> shape(ndim);
    std::size_t numel = 1;
    for (std::uint32_t i = 0; i < ndim; ++i) {
      shape[i] = static_cast<int>(get_u32(is));
      if (shape[i] < 1) throw std::runtime_error("checkpoint: bad dimension in '" + name + "'");
      numel *= static_cast<std::size_t>(shape[i]);
    }
    auto it = slots.find(name);
    if (it == slots.end()) {
      throw std::runtime_error("checkpoint: unexpected parameter '" + name + "'");
    }
    if (it->second->shape() != shape) {
      throw std::runtime_error("checkpoint: shape mismatch for '" + name + "': file has " +
                               shape_str(shape) + ", config wants " +
                               shape_str(it->second->shape()));
    }
    if (seen[name]) throw std::runtime_error("checkpoint: duplicate parameter '" + name + "'");
    seen[name] = true;
    double* p = it->second->data();
    for (std::size_t i = 0; i < numel; ++i) p[i] = get_f64(is);
  }
  for (const auto& [name, slot] : slots) {
    if (!seen[name]) throw std::runtime_error("checkpoint: missing parameter '" + name + "'");
  }
  return ckpt;
}

}  // namespace lkf
