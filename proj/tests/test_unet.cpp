#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "dbuf/error.hpp"
#include "dbuf/kvconfig.hpp"
#include "dbuf/unet.hpp"
#include "support.hpp"

using namespace dbuf;
using dbtest::random_array;

namespace {

UNetConfig small_predictive() {
  UNetConfig c;
  c.channels = {4, 8, 8};
  c.time_strides = {2, 2};
  c.freq_strides = {2, 2};
  c.time_kernels = {3, 3};
  c.freq_kernels = {3, 3};
  c.mode = UNetMode::Predictive;
  c.buffer_len = 4;
  return c;
}

ComplexMatrix random_complex(std::size_t F, std::size_t K, std::uint64_t seed) {
  Rng rng(seed);
  ComplexMatrix m(F, K);
  for (auto& v : m.values()) v = 0.3 * rng.complex_normal();
  return m;
}

}  // namespace

TEST_SUITE("unet") {
  TEST_CASE("left pad amount") {
    CHECK(left_pad_amount(7, 3, 2) == 2);  // two zeros ahead of the first window
    CHECK(left_pad_amount(8, 2, 2) == 0);
    CHECK(left_pad_amount(12, 4, 4) == 0);
    CHECK(left_pad_amount(1, 1, 1) == 0);
    CHECK(left_pad_amount(1, 5, 4) == 4);
    for (std::size_t n = 1; n < 30; ++n)
      for (std::size_t s = 1; s <= 4; ++s)
        for (std::size_t k = s; k <= s + 4; ++k) {
          const std::size_t p = left_pad_amount(n, k, s);
          // The last window ends exactly on the last sample and the windows
          // count ceil(n/s).
          CHECK((n + p - k) % s == 0);
          CHECK((n + p - k) / s + 1 == (n + s - 1) / s);
        }
    CHECK_THROWS_AS(left_pad_amount(7, 1, 2), ConfigError);
    CHECK_THROWS_AS(left_pad_amount(7, 3, 0), ConfigError);
    CHECK_THROWS_AS(left_pad_amount(0, 3, 2), DomainError);
  }

  TEST_CASE("block-causal downsample of 7 frames: the last output touches no zeros") {
    const auto x = random_array({1, 1, 1, 7}, 1);
    Array4 k({1, 1, 1, 3}, 1.0);
    const auto h = bc_downsample(x, k, 2);
    REQUIRE(h.shape().time == 4);
    CHECK(h(0, 0, 0, 3) == doctest::Approx(x(0, 0, 0, 4) + x(0, 0, 0, 5) + x(0, 0, 0, 6)));
    CHECK(h(0, 0, 0, 0) == doctest::Approx(x(0, 0, 0, 0)));  // two left zeros + first sample
    CHECK(bc_downsample(Array4({1, 1, 1, 7}), k, 2) == Array4({1, 1, 1, 4}));
  }

  TEST_CASE("block-causal downsample ignores frames appended later") {
    Array4 k = random_array({2, 1, 1, 3}, 2);
    const auto full = random_array({1, 1, 2, 10}, 3);
    const auto y_full = bc_downsample(full, k, 2);
    for (std::size_t n : {2u, 4u, 6u, 8u}) {
      Array4 pre({1, 1, 2, n});
      for (std::size_t f = 0; f < 2; ++f)
        for (std::size_t t = 0; t < n; ++t) pre(0, 0, f, t) = full(0, 0, f, t);
      const auto y = bc_downsample(pre, k, 2);
      REQUIRE(y.shape().time == n / 2);
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t f = 0; f < 2; ++f)
          for (std::size_t t = 0; t < n / 2; ++t) CHECK(y(0, c, f, t) == doctest::Approx(y_full(0, c, f, t)));
    }
  }

  TEST_CASE("upsample crops on the left back to the input length") {
    Array4 kd({1, 1, 1, 3}, 1.0), ku({1, 1, 1, 3}, 1.0);
    for (std::size_t n = 1; n <= 25; ++n) {
      for (std::size_t s : {1u, 2u, 3u}) {
        const auto x = random_array({1, 1, 1, n}, n);
        const auto h = bc_downsample(x, kd, s);
        CHECK(h.shape().time == (n + s - 1) / s);
        CHECK(bc_upsample(h, ku, s, n).shape().time == n);
      }
    }
    const auto h = random_array({1, 1, 1, 4}, 9);
    const auto o = bc_upsample(h, ku, 2, 7);
    REQUIRE(o.shape().time == 7);
    // Full transposed output has 9 tokens; the last (k - s) = 1 is dropped and
    // one more comes off the left, so o[t] = full[t + 1].
    const auto full = conv_transpose2d(h, ku, {}, {1, 2});
    for (std::size_t t = 0; t < 7; ++t) CHECK(o(0, 0, 0, t) == full(0, 0, 0, t + 1));
    CHECK(bc_upsample(Array4({1, 1, 1, 4}), ku, 2, 7) == Array4({1, 1, 1, 7}));
    CHECK_THROWS_AS(bc_upsample(h, ku, 2, 9), StateError);
  }

  TEST_CASE("predictive net preserves the frame count for any length") {
    UNet net(small_predictive());
    for (std::size_t n = 1; n <= 21; ++n) {
      const auto y = net.infer(random_array({1, 2, 12, n}, n), {});
      CHECK(y.shape() == Shape4{1, 2, 12, n});
      CHECK(y.all_finite());
    }
    CHECK(net.forward_predictive(ComplexMatrix(12, 0)).frames() == 0);
  }

  TEST_CASE("block-aligned prefixes give the same outputs") {
    UNet net(small_predictive());
    const auto x = random_array({1, 2, 12, 20}, 4);
    const auto full = net.infer(x, {});
    for (std::size_t n : {4u, 8u, 16u}) {
      Array4 pre({1, 2, 12, n});
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t f = 0; f < 12; ++f)
          for (std::size_t t = 0; t < n; ++t) pre(0, c, f, t) = x(0, c, f, t);
      const auto y = net.infer(pre, {});
      double worst = 0.0;
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t f = 0; f < 12; ++f)
          for (std::size_t t = 0; t < n; ++t) worst = std::max(worst, std::abs(y(0, c, f, t) - full(0, c, f, t)));
      CHECK(worst < 1e-12);
    }
  }

  TEST_CASE("diffusion forward returns the last B frames") {
    UNet net(UNetConfig{});
    const auto V = random_complex(256, 64, 1), Y = random_complex(256, 64, 2);
    const auto t = inference_schedule(16, BbedParams{});
    const auto out = net.forward_diffusion(V, Y, t);
    CHECK(out.bins() == 256);
    CHECK(out.frames() == 16);
    // Same inputs, same bits.
    CHECK(net.forward_diffusion(V, Y, t) == out);
    CHECK_THROWS_AS(net.forward_diffusion(random_complex(256, 8, 3), random_complex(256, 8, 4), t), DomainError);
    CHECK_THROWS_AS(net.forward_diffusion(V, Y, inference_schedule(8, BbedParams{})), DomainError);
    CHECK_THROWS_AS(net.forward_diffusion(V, random_complex(256, 32, 5), t), ShapeError);
    CHECK_THROWS_AS(net.forward_predictive(Y), StateError);
    CHECK_THROWS_AS(UNet(small_predictive()).forward_diffusion(V, Y, t), StateError);
  }

  TEST_CASE("diffusion times enter through the embedding") {
    UNet net(UNetConfig{});
    const auto V = random_complex(32, 32, 6), Y = random_complex(32, 32, 7);
    const auto a = net.forward_diffusion(V, Y, inference_schedule(16, BbedParams{}));
    const auto b = net.forward_diffusion(V, Y, ScheduleVector(std::vector<double>(
                                                    {0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6, 0.65,
                                                     0.7, 0.75, 0.8, 0.85})));
    CHECK_FALSE(a == b);
    const auto times = UNet::buffer_frame_times(20, inference_schedule(16, BbedParams{}));
    CHECK(times[3] == 0.0);
    CHECK(times[4] == 0.03);
    CHECK(times[19] == 0.999);
  }

  TEST_CASE("zero output layer gives a zero output") {
    UNet net(small_predictive());
    net.params().get("out.w").value.fill(0.0);
    net.params().get("out.b").value.fill(0.0);
    const auto y = net.infer(random_array({2, 2, 12, 9}, 5), {});
    for (double v : y.values()) CHECK(v == 0.0);
  }

  TEST_CASE("mask head gates the noisy input") {
    UNetConfig c = small_predictive();
    c.output = OutputKind::Mask;
    UNet net(c);
    CHECK(net.params().get("out.w").value.shape().batch == 1);
    net.params().get("out.w").value.fill(0.0);
    auto& b = net.params().get("out.b").value;
    b.fill(40.0);  // sigmoid rounds to 1
    const auto Y = random_complex(12, 10, 8);
    CHECK(net.forward_predictive(Y) == Y);
    b.fill(0.0);
    const auto R = net.forward_predictive(Y);
    for (std::size_t k = 0; k < 10; ++k)
      for (std::size_t f = 0; f < 12; ++f) CHECK(R(f, k) == 0.5 * Y(f, k));
    // Whatever the weights, the estimate never exceeds the input magnitude.
    net.initialize(3);
    const auto G = net.forward_predictive(Y);
    for (std::size_t k = 0; k < 10; ++k)
      for (std::size_t f = 0; f < 12; ++f) CHECK(std::abs(G(f, k)) <= std::abs(Y(f, k)));

    // Diffusion mode gates Y, not V.
    UNetConfig d;
    d.output = OutputKind::Mask;
    UNet dn(d);
    dn.params().get("out.w").value.fill(0.0);
    dn.params().get("out.b").value.fill(40.0);
    const auto V = random_complex(16, 32, 9), Yd = random_complex(16, 32, 10);
    CHECK(dn.forward_diffusion(V, Yd, inference_schedule(16, BbedParams{})) == Yd.slice_frames(16, 16));
  }

  TEST_CASE("initialisation is a deterministic function of the seed") {
    UNet a(small_predictive()), b(small_predictive());
    const auto x = random_array({1, 2, 12, 8}, 6);
    CHECK(a.infer(x, {}) == b.infer(x, {}));
    b.initialize(99);
    CHECK_FALSE(a.infer(x, {}) == b.infer(x, {}));
    a.initialize(99);
    CHECK(a.infer(x, {}) == b.infer(x, {}));
    // Biases start at zero, norm scales at one.
    for (auto& [name, p] : a.params().items()) {
      if (name.ends_with(".b") || name.ends_with(".beta")) {
        for (double v : p.value.values()) CHECK(v == 0.0);
      }
      if (name.ends_with(".g")) {
        for (double v : p.value.values()) CHECK(v == 1.0);
      }
    }
  }

  TEST_CASE("parameter names follow the stage layout") {
    UNet net(UNetConfig{});
    const auto& ps = net.params();
    CHECK(ps.contains("in.w"));
    CHECK(ps.contains("out.w"));
    for (int l = 1; l <= 4; ++l) {
      CHECK(ps.contains("down" + std::to_string(l) + ".conv0.w"));
      CHECK(ps.contains("up" + std::to_string(l) + ".tconv.w"));
    }
    UNet pred(small_predictive());
    CHECK(pred.params().count() < net.params().count());
  }

  TEST_CASE("config validation") {
    UNetConfig c;
    CHECK_NOTHROW(c.validate());
    CHECK(c.global_stride() == 16);
    c.buffer_len = 8;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = UNetConfig{};
    c.channels.pop_back();
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = UNetConfig{};
    c.time_kernels[0] = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = UNetConfig{};
    c.freq_kernels[2] = 4;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = UNetConfig{};
    c.fourier_dim = 7;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    // Predictive mode does not tie g to the buffer length.
    c = small_predictive();
    c.buffer_len = 1;
    CHECK_NOTHROW(c.validate());
    CHECK_THROWS_AS(UNet(UNetConfig{.channels = {4}}), ConfigError);
  }

  TEST_CASE("config JSON round trip and hash") {
    UNetConfig c;
    c.padding = PaddingKind::Symmetric;
    c.norm = NormKind::None;
    c.output = OutputKind::Mask;
    const auto back = UNetConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
    CHECK(back.hash() == c.hash());
    CHECK(UNetConfig{}.hash() != c.hash());
    CHECK(c.to_json().at("padding") == "symmetric");
    CHECK(c.to_json().at("norm") == "none");
    CHECK(c.to_json().at("output") == "mask");
    CHECK(UNetConfig{}.to_json().at("mode") == "diffusion");
    auto j = c.to_json();
    j["buffer_len"] = 3;
    CHECK_THROWS_AS(UNetConfig::from_json(j), ConfigError);
    CHECK_THROWS_AS(UNetConfig::from_json(nlohmann::json::object()), ConfigError);
  }

  TEST_CASE("enum strings") {
    CHECK(parse_unet_mode("predictive") == UNetMode::Predictive);
    CHECK(parse_norm_kind("cumulative") == NormKind::Cumulative);
    CHECK(parse_padding_kind("block_causal") == PaddingKind::BlockCausal);
    CHECK(std::string(to_string(PaddingKind::Symmetric)) == "symmetric");
    CHECK_THROWS_AS(parse_unet_mode("score"), ConfigError);
    CHECK_THROWS_AS(parse_norm_kind("batch"), ConfigError);
    CHECK_THROWS_AS(parse_padding_kind("causal"), ConfigError);
    CHECK(parse_output_kind("mask") == OutputKind::Mask);
    CHECK(std::string(to_string(OutputKind::Direct)) == "direct");
    CHECK_THROWS_AS(parse_output_kind("residual"), ConfigError);
  }

  TEST_CASE("stack and unstack complex channels") {
    const auto a = random_complex(5, 3, 1), b = random_complex(5, 3, 2);
    const auto s = stack_complex({&a, &b});
    CHECK(s.shape() == Shape4{1, 4, 5, 3});
    CHECK(s(0, 2, 1, 2) == b(1, 2).real());
    CHECK(s(0, 3, 4, 0) == b(4, 0).imag());
    CHECK(unstack_complex(s) == a);
    const auto c = random_complex(5, 4, 3);
    CHECK_THROWS_AS(stack_complex({&a, &c}), ShapeError);
  }
}

TEST_SUITE("kvconfig") {
  TEST_CASE("parses sections, arrays, strings and comments") {
    const auto kv = KvConfig::parse(
        "# header\n[unet]\nchannels = [4, 8, 8]  # trailing\ntime_strides = [2,2]\nfreq_strides = [2, 2]\n"
        "time_kernels = [3, 3]\nfreq_kernels = [3, 3]\nmode = \"predictive\"\nnorm = none\n\n[bbed]\nc = 0.1\n");
    CHECK(kv.get_string("unet.mode") == "predictive");
    CHECK(kv.get_string("unet.norm") == "none");
    CHECK(kv.get_size_list("unet.channels") == std::vector<std::size_t>{4, 8, 8});
    CHECK(kv.get_double("bbed.c") == 0.1);
    const auto c = unet_config_from(kv);
    CHECK(c.mode == UNetMode::Predictive);
    CHECK(c.norm == NormKind::None);
    CHECK(c.global_stride() == 4);
    CHECK(bbed_params_from(kv).c == 0.1);
    CHECK(bbed_params_from(kv).r == 2.6);
  }

  TEST_CASE("rejects malformed input and unknown keys") {
    CHECK_THROWS_AS(KvConfig::parse("[unet\nx = 1\n"), ConfigError);
    CHECK_THROWS_AS(KvConfig::parse("x 1\n"), ConfigError);
    CHECK_THROWS_AS(unet_config_from(KvConfig::parse("[unet]\nwidth = 3\n")), ConfigError);
    CHECK_THROWS_AS(KvConfig::parse("[bbed]\nc = abc\n").get_double("bbed.c"), ConfigError);
    CHECK_THROWS_AS(KvConfig::parse("[unet]\nchannels = [1, x]\n").get_size_list("unet.channels"), ConfigError);
    CHECK_THROWS_AS(KvConfig::parse("").get_string("a.b"), ConfigError);
    CHECK_THROWS_AS(KvConfig::load("/nonexistent/none.toml"), ConfigError);
  }

  TEST_CASE("shipped configs load") {
    const std::filesystem::path dir = DBUF_SOURCE_DIR "/configs";
    const auto g16 = unet_config_from(KvConfig::load((dir / "bc_g16.toml").string()));
    CHECK(g16.global_stride() == 16);
    CHECK(g16.hash() == UNetConfig{}.hash());
    CHECK(unet_config_from(KvConfig::load((dir / "bc_g32.toml").string())).global_stride() == 32);
    CHECK(unet_config_from(KvConfig::load((dir / "symmetric_g16.toml").string())).padding == PaddingKind::Symmetric);
    CHECK(unet_config_from(KvConfig::load((dir / "predictive_g16.toml").string())).mode == UNetMode::Predictive);
  }
}
