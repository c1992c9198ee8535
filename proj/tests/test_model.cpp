#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "lkf/autograd.hpp"
#include "lkf/model.hpp"
#include "oracles.hpp"

using namespace lkf;
using testing::bit_equal;
using testing::max_abs_diff;
using testing::uniform_tensor;

namespace {

LkformerConfig toy_config() {
  LkformerConfig cfg;
  cfg.channels = 4;
  cfg.rtb_count = 1;
  cfg.tl_count = 1;
  cfg.scale = 2;
  cfg.lkra.kernels = {3, 5};
  return cfg;
}

void zero_conv(Conv2dParams& c) {
  std::fill(c.weight.data(), c.weight.data() + c.weight.numel(), 0.0);
  if (c.has_bias()) std::fill(c.bias.data(), c.bias.data() + c.bias.numel(), 0.0);
}

void zero_lkra(LkraParams& p) {
  zero_conv(p.proj_in);
  if (p.local.col.weight.defined()) {
    zero_conv(p.local.col);
    zero_conv(p.local.row);
  }
  for (RdbParams& r : p.rdbs) {
    zero_conv(r.sep.col);
    zero_conv(r.sep.row);
  }
  zero_conv(p.value);
  zero_conv(p.proj_out);
}

void zero_gpfn(GpfnParams& p) {
  zero_conv(p.expand);
  zero_conv(p.value);
  zero_conv(p.attn_point);
  zero_conv(p.attn_dw);
  zero_conv(p.proj_out);
}

void zero_tl(TlParams& p) {
  zero_lkra(p.lkra);
  zero_gpfn(p.gpfn);
}

}  // namespace

TEST_CASE("config validation") {
  LkformerConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.scale = 3;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.scale = 2;
  cfg.lkra.kernels = {11, 11};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.lkra.kernels = {11, 10};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.lkra.kernels = {};
  cfg.lkra.use_local_pair = false;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.lkra.use_local_pair = true;
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("build is deterministic per seed") {
  LkformerConfig cfg = toy_config();
  Rng a(5), b(5), c(6);
  LkformerParams pa = build_model(cfg, a);
  LkformerParams pb = build_model(cfg, b);
  LkformerParams pc = build_model(cfg, c);
  bool same = true, diff = false;
  for_each_param(pa, [&](const std::string& name, Tensor& t) {
    Tensor* tb = nullptr;
    for_each_param(pb, [&](const std::string& n2, Tensor& t2) {
      if (n2 == name) tb = &t2;
    });
    REQUIRE(tb != nullptr);
    same &= bit_equal(t, *tb);
  });
  for_each_param(pa, [&](const std::string& name, Tensor& t) {
    for_each_param(pc, [&](const std::string& n2, Tensor& t2) {
      if (n2 == name && !bit_equal(t, t2)) diff = true;
    });
  });
  CHECK(same);
  CHECK(diff);
}

TEST_CASE("rdb matches hand composition and its zero cases") {
  Rng rng(3);
  SeparableDwcParams sep = make_separable_dwc(4, 11, rng);
  RdbParams rdb{sep};
  Tensor x = uniform_tensor({1, 4, 16, 16}, rng, -1.0, 1.0);

  Tensor got = rdb_forward(x, rdb, true);
  Tensor want = silu(add(x, separable_dwc(x, sep)));
  CHECK(bit_equal(got, want));

  // all-zero kernels and biases reduce to silu(x)
  RdbParams zeroed = rdb;
  zeroed.sep.col.weight = zeros_like(sep.col.weight);
  zeroed.sep.col.bias = zeros_like(sep.col.bias);
  zeroed.sep.row.weight = zeros_like(sep.row.weight);
  zeroed.sep.row.bias = zeros_like(sep.row.bias);
  CHECK(bit_equal(rdb_forward(x, zeroed, true), silu(x)));

  // zero input with zero bias stays zero
  Tensor z = zeros({1, 4, 8, 8});
  CHECK(bit_equal(rdb_forward(z, rdb, true), z));

  // the residual toggle is observable
  CHECK(max_abs_diff(rdb_forward(x, rdb, true), rdb_forward(x, rdb, false)) > 1e-6);
}

TEST_CASE("lkra matches the step-by-step composition") {
  Rng rng(7);
  LkformerConfig cfg = toy_config();
  cfg.channels = 8;
  cfg.lkra.kernels = {11, 21, 31};
  LkformerParams model = build_model(cfg, rng);
  const LkraParams& p = model.rtbs[0].tls[0].lkra;
  Tensor h = uniform_tensor({1, 8, 16, 16}, rng, -1.0, 1.0);

  Tensor a = silu(conv2d(h, p.proj_in));
  a = separable_dwc(a, p.local);
  for (const RdbParams& r : p.rdbs) a = silu(add(a, separable_dwc(a, r.sep)));
  Tensor want = conv2d(mul(conv2d(h, p.value), a), p.proj_out);
  CHECK(bit_equal(lkra_forward(h, p, cfg.lkra), want));
}

TEST_CASE("lkra zero branches") {
  Rng rng(9);
  LkformerConfig cfg = toy_config();
  LkformerParams model = build_model(cfg, rng);
  LkraParams p = model.rtbs[0].tls[0].lkra;
  Tensor h = uniform_tensor({2, 4, 10, 10}, rng, -1.0, 1.0);

  SUBCASE("zero final projection annihilates") {
    p.proj_out.weight = zeros_like(p.proj_out.weight);
    p.proj_out.bias = zeros_like(p.proj_out.bias);
    CHECK(bit_equal(lkra_forward(h, p, cfg.lkra), zeros({2, 4, 10, 10})));
  }

  SUBCASE("zero value branch leaves only the final conv bias") {
    p.value.weight = zeros_like(p.value.weight);
    p.value.bias = zeros_like(p.value.bias);
    for (std::size_t i = 0; i < p.proj_out.bias.numel(); ++i) {
      p.proj_out.bias.data()[i] = 0.25 * (1.0 + static_cast<double>(i));
    }
    Tensor y = lkra_forward(h, p, cfg.lkra);
    for (int c = 0; c < 4; ++c) {
      for (int yy = 0; yy < 10; ++yy) {
        for (int xx = 0; xx < 10; ++xx) {
          CHECK(y.at4(0, c, yy, xx) == p.proj_out.bias.data()[c]);
        }
      }
    }
  }
}

TEST_CASE("gpfn composition and gating") {
  Rng rng(11);
  LkformerConfig cfg = toy_config();
  cfg.channels = 8;
  LkformerParams model = build_model(cfg, rng);
  GpfnParams p = model.rtbs[0].tls[0].gpfn;
  Tensor f = uniform_tensor({1, 8, 8, 8}, rng, -1.0, 1.0);

  SUBCASE("matches the step-by-step composition") {
    Tensor h = silu(conv2d(f, p.expand));
    Tensor attn = conv2d(conv2d(h, p.attn_point), p.attn_dw);
    Tensor want = conv2d(mul(conv2d(h, p.value), attn), p.proj_out);
    CHECK(bit_equal(gpfn_forward(f, p), want));
  }

  SUBCASE("all-zero weights produce zeros") {
    zero_gpfn(p);
    CHECK(bit_equal(gpfn_forward(f, p), zeros_like(f)));
  }

  SUBCASE("a zero attention branch closes the gate") {
    p.attn_point.weight = zeros_like(p.attn_point.weight);
    p.attn_point.bias = zeros_like(p.attn_point.bias);
    p.attn_dw.weight = zeros_like(p.attn_dw.weight);
    p.attn_dw.bias = zeros_like(p.attn_dw.bias);
    CHECK(bit_equal(gpfn_forward(f, p), zeros_like(f)));
  }
}

TEST_CASE("tl and rtb are identities with zeroed branches") {
  Rng rng(13);
  LkformerConfig cfg = toy_config();
  cfg.tl_count = 2;
  LkformerParams model = build_model(cfg, rng);
  Tensor x = uniform_tensor({1, 4, 9, 9}, rng, -1.0, 1.0);

  RtbParams& rtb = model.rtbs[0];
  for (TlParams& tl : rtb.tls) zero_tl(tl);
  CHECK(bit_equal(tl_forward(x, rtb.tls[0], cfg.lkra), x));

  zero_conv(rtb.fuse);
  CHECK(bit_equal(rtb_forward(x, rtb, cfg.lkra), x));
}

TEST_CASE("rtb with one layer equals tl + conv + skip") {
  Rng rng(17);
  LkformerConfig cfg = toy_config();
  LkformerParams model = build_model(cfg, rng);
  const RtbParams& rtb = model.rtbs[0];
  Tensor x = uniform_tensor({1, 4, 12, 12}, rng, -1.0, 1.0);
  Tensor want = add(x, conv2d(tl_forward(x, rtb.tls[0], cfg.lkra), rtb.fuse));
  CHECK(bit_equal(rtb_forward(x, rtb, cfg.lkra), want));
}

TEST_CASE("tl and rtb preserve shape") {
  Rng rng(19);
  LkformerConfig cfg = toy_config();
  LkformerParams model = build_model(cfg, rng);
  for (int h : {1, 5, 13}) {
    for (int w : {1, 8}) {
      Tensor x = uniform_tensor({1, 4, h, w}, rng, -1.0, 1.0);
      CHECK(tl_forward(x, model.rtbs[0].tls[0], cfg.lkra).shape() == x.shape());
      CHECK(rtb_forward(x, model.rtbs[0], cfg.lkra).shape() == x.shape());
    }
  }
}

TEST_CASE("lkformer output scale contract") {
  Rng rng(23);
  LkformerConfig cfg = toy_config();
  LkformerParams params = build_model(cfg, rng);
  Tensor x = uniform_tensor({1, 1, 24, 24}, rng, 0.0, 1.0);
  CHECK(lkformer_forward(x, cfg, params).shape() == std::vector<int>{1, 1, 48, 48});

  LkformerConfig cfg4 = toy_config();
  cfg4.scale = 4;
  Rng rng4(23);
  LkformerParams params4 = build_model(cfg4, rng4);
  Tensor y = uniform_tensor({1, 1, 16, 20}, rng, 0.0, 1.0);
  CHECK(lkformer_forward(y, cfg4, params4).shape() == std::vector<int>{1, 1, 64, 80});

  CHECK_THROWS_AS(lkformer_forward(uniform_tensor({1, 1, 4, 24}, rng, 0.0, 1.0), cfg, params),
                  std::invalid_argument);
  CHECK_THROWS_AS(lkformer_forward(uniform_tensor({1, 2, 24, 24}, rng, 0.0, 1.0), cfg, params),
                  std::invalid_argument);
}

TEST_CASE("lkformer forward is deterministic") {
  Rng rng(29);
  LkformerConfig cfg = toy_config();
  LkformerParams params = build_model(cfg, rng);
  Tensor x = uniform_tensor({2, 1, 16, 16}, rng, 0.0, 1.0);
  CHECK(bit_equal(lkformer_forward(x, cfg, params), lkformer_forward(x, cfg, params)));
}

TEST_CASE("zeroed trunk reduces the model to its reconstruction of shallow features") {
  Rng rng(31);
  LkformerConfig cfg = toy_config();
  cfg.rtb_count = 2;
  LkformerParams params = build_model(cfg, rng);
  for (RtbParams& rtb : params.rtbs) {
    for (TlParams& tl : rtb.tls) zero_tl(tl);
    zero_conv(rtb.fuse);
  }
  Tensor x = uniform_tensor({1, 1, 12, 12}, rng, 0.0, 1.0);
  // with an identity trunk, every concatenated block output equals shallow
  Tensor shallow = conv2d(x, params.shallow);
  Tensor fused = conv2d(concat_channels({shallow, shallow}), params.fusion);
  Tensor g = add(fused, shallow);
  for (const Conv2dParams& up : params.ups) g = pixel_shuffle(conv2d(g, up), 2);
  Tensor want = conv2d(g, params.out);
  CHECK(bit_equal(lkformer_forward(x, cfg, params), want));
}

TEST_CASE("toy model gradients pass the oracle") {
  Rng rng(37);
  LkformerConfig cfg;
  cfg.channels = 4;
  cfg.rtb_count = 1;
  cfg.tl_count = 1;
  cfg.scale = 2;
  cfg.lkra.kernels = {3};
  LkformerParams params = build_model(cfg, rng);
  Tensor x = uniform_tensor({1, 1, 10, 10}, rng, 0.0, 1.0);

  std::vector<std::pair<std::string, Tensor>> inputs{{"x", x}};
  for_each_param(params, [&inputs](const std::string& name, Tensor& t) {
    inputs.emplace_back(name, t);
  });
  auto f = [&cfg, &params](const std::vector<Tensor>& v) {
    LkformerParams live = params;
    std::size_t i = 1;
    for_each_param(live, [&v, &i](const std::string&, Tensor& t) { t = v[i++]; });
    return mean(mul(lkformer_forward(v[0], cfg, live), full({1, 1, 20, 20}, 0.5)));
  };
  GradReport r = gradcheck(f, inputs);
  CHECK(r.pass);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  namespace fs = std::filesystem;
  const std::string path = (fs::temp_directory_path() / "lkf_test_ckpt.lkf").string();
  Rng rng(41);
  LkformerConfig cfg = toy_config();
  cfg.lkra.kernels = {3, 7};
  LkformerParams params = build_model(cfg, rng);
  save_checkpoint(path, cfg, params);
  Checkpoint loaded = load_checkpoint(path);
  CHECK(loaded.config.channels == cfg.channels);
  CHECK(loaded.config.lkra.kernels == cfg.lkra.kernels);
  std::size_t checked = 0;
  for_each_param(params, [&](const std::string& name, Tensor& t) {
    for_each_param(loaded.params, [&](const std::string& n2, Tensor& t2) {
      if (n2 == name) {
        CHECK(bit_equal(t, t2));
        ++checked;
      }
    });
  });
  CHECK(checked > 0);
  fs::remove(path);
}

TEST_CASE("checkpoint format errors") {
  namespace fs = std::filesystem;
  const std::string dir = fs::temp_directory_path().string();
  const std::string good = dir + "/lkf_test_good.lkf";
  Rng rng(43);
  LkformerConfig cfg = toy_config();
  LkformerParams params = build_model(cfg, rng);
  save_checkpoint(good, cfg, params);

  SUBCASE("wrong magic") {
    const std::string bad = dir + "/lkf_test_magic.lkf";
    std::ifstream in(good, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    bytes[0] = 'X';
    std::ofstream out(bad, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    CHECK_THROWS_WITH_AS(load_checkpoint(bad), doctest::Contains("magic"), std::runtime_error);
    fs::remove(bad);
  }

  SUBCASE("truncated file") {
    const std::string bad = dir + "/lkf_test_trunc.lkf";
    std::ifstream in(good, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    bytes.resize(bytes.size() / 2);
    std::ofstream out(bad, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    CHECK_THROWS_AS(load_checkpoint(bad), std::runtime_error);
    fs::remove(bad);
  }

  SUBCASE("missing file") { CHECK_THROWS_AS(load_checkpoint(dir + "/nope.lkf"), std::runtime_error); }
  fs::remove(good);
}

TEST_CASE("config record round trips") {
  LkformerConfig cfg = toy_config();
  cfg.lkra.use_local_pair = true;
  cfg.lkra.inner_residual = false;
  cfg.gpfn_expansion = 3;
  LkformerConfig back = parse_config(serialize_config(cfg));
  CHECK(back.channels == cfg.channels);
  CHECK(back.rtb_count == cfg.rtb_count);
  CHECK(back.tl_count == cfg.tl_count);
  CHECK(back.scale == cfg.scale);
  CHECK(back.lkra.kernels == cfg.lkra.kernels);
  CHECK(back.lkra.inner_residual == cfg.lkra.inner_residual);
  CHECK(back.gpfn_expansion == cfg.gpfn_expansion);
  CHECK_THROWS_AS(parse_config("nonsense\n"), std::runtime_error);
  CHECK_THROWS_AS(parse_config("bogus_key=1\n"), std::runtime_error);
}
