#include <catch2/catch_amalgamated.hpp>

#include "lret/model.hpp"
#include "lret/resizer.hpp"
#include "test_util.hpp"

using namespace lret;
using testutil::random_tensor;

namespace {

Tensor hfe_forward(const HfeSpec& spec, int in_h, int in_w, Mode mode = Mode::Train) {
  ParamStore ps;
  Rng rng(99);
  Hfe hfe(ps, spec, rng);
  Rng data_rng(7);
  Tensor x = random_tensor({1, in_h, in_w, 3}, data_rng, 0.0, 1.0);
  Tape tape;
  tape.mode = mode;
  return hfe(tape, make_constant(x))->val;
}

}  // namespace

TEST_CASE("HFE emits (T,T,8) for the published input sizes") {
  {
    HfeSpec s;
    s.input_h = s.input_w = 1024;
    s.target = 256;
    s.use_subsampling_pool = true;
    Tensor out = hfe_forward(s, 1024, 1024);
    REQUIRE(out.shape() == std::vector<int>{1, 256, 256, 8});
  }
  {
    HfeSpec s;
    s.input_h = s.input_w = 512;
    s.target = 256;
    s.use_subsampling_pool = false;
    Tensor out = hfe_forward(s, 512, 512);
    REQUIRE(out.shape() == std::vector<int>{1, 256, 256, 8});
  }
  {
    HfeSpec s;
    s.input_h = s.input_w = 768;
    s.target = 256;
    s.use_subsampling_pool = false;
    Tensor out = hfe_forward(s, 768, 768);  // 384x384 conv output, resized down
    REQUIRE(out.shape() == std::vector<int>{1, 256, 256, 8});
  }
}

TEST_CASE("HFE final resize engages only when the conv stack misses T") {
  ParamStore ps;
  Rng rng(1);
  HfeSpec s;
  s.input_h = s.input_w = 1024;
  s.target = 256;
  Hfe hfe(ps, s, rng);
  Rng data_rng(2);
  Tensor x = random_tensor({1, 1024, 1024, 3}, data_rng, 0.0, 1.0);
  Tape tape;
  Value out = hfe(tape, make_constant(x));
  REQUIRE(out->tag != "hfe.final_resize");

  ParamStore ps2;
  HfeSpec s2;
  s2.input_h = s2.input_w = 768;
  s2.target = 256;
  s2.use_subsampling_pool = false;
  Hfe hfe2(ps2, s2, rng);
  Tensor x2 = random_tensor({1, 768, 768, 3}, data_rng, 0.0, 1.0);
  Tape tape2;
  Value out2 = hfe2(tape2, make_constant(x2));
  REQUIRE(out2->tag == "hfe.final_resize");
}

TEST_CASE("HFE output shape holds across desk-scale targets") {
  for (int t : {16, 32, 64}) {
    HfeSpec s;
    s.input_h = s.input_w = 4 * t;
    s.target = t;
    Tensor out = hfe_forward(s, 4 * t, 4 * t);
    REQUIRE(out.shape() == std::vector<int>{1, t, t, 8});
  }
  // Non-power-of-two multiples go through the final resize.
  for (int t : {32, 64}) {
    HfeSpec s;
    s.input_h = s.input_w = 3 * t;
    s.target = t;
    s.use_subsampling_pool = false;
    Tensor out = hfe_forward(s, 3 * t, 3 * t);
    REQUIRE(out.shape() == std::vector<int>{1, t, t, 8});
  }
}

TEST_CASE("HFE parameter count is independent of input spatial size") {
  Rng rng(3);
  ParamStore a, b;
  HfeSpec sa;
  sa.input_h = sa.input_w = 512;
  HfeSpec sb;
  sb.input_h = sb.input_w = 1024;
  Hfe ha(a, sa, rng);
  Hfe hb(b, sb, rng);
  REQUIRE(a.trainable_size() == b.trainable_size());
}

TEST_CASE("HFE rejects targets larger than the input") {
  ParamStore ps;
  Rng rng(4);
  HfeSpec s;
  s.input_h = s.input_w = 128;
  s.target = 256;
  REQUIRE_THROWS_AS(Hfe(ps, s, rng), std::invalid_argument);
}

TEST_CASE("GLR emits the requested target shape") {
  ParamStore ps;
  Rng rng(5);
  GlrSpec s;
  s.input_h = s.input_w = 160;
  Glr glr(ps, s, rng);
  Rng data_rng(6);
  Tensor x = random_tensor({2, 160, 160, 3}, data_rng, 0.0, 1.0);
  Tape tape;
  Value out = glr(tape, make_constant(x));
  REQUIRE(out->val.shape() == std::vector<int>{2, 224, 224, 3});

  ParamStore ps2;
  GlrSpec s2;
  s2.input_h = s2.input_w = 320;
  s2.target_h = s2.target_w = 299;
  Glr glr2(ps2, s2, rng);
  Tensor x2 = random_tensor({1, 320, 320, 3}, data_rng, 0.0, 1.0);
  Tape tape2;
  Value out2 = glr2(tape2, make_constant(x2));
  REQUIRE(out2->val.shape() == std::vector<int>{1, 299, 299, 3});
}

TEST_CASE("GLR with a zeroed learned path equals the bilinear skip bit-exactly") {
  ParamStore ps;
  Rng rng(7);
  GlrSpec s;
  s.input_h = s.input_w = 48;
  s.target_h = s.target_w = 32;
  Glr glr(ps, s, rng);
  ps.for_each([](Param& p) {
    // zero conv kernels/biases and batch-norm offsets; gains are irrelevant
    if (p.name.find(".gamma") == std::string::npos &&
        p.name.find(".running_var") == std::string::npos) {
      std::fill(p.value.vec().begin(), p.value.vec().end(), 0.0f);
    }
  });
  Rng data_rng(8);
  Tensor x = random_tensor({1, 48, 48, 3}, data_rng, 0.0, 1.0);
  Tape tape;
  tape.mode = Mode::Train;
  Value out = glr(tape, make_constant(x));
  Tensor skip = bilinear_resize_tensor(x, 32, 32);
  REQUIRE(out->val.same_shape(skip));
  for (int64_t i = 0; i < skip.size(); ++i) REQUIRE(out->val[i] == skip[i]);
}

TEST_CASE("static resize examples") {
  Rng rng(9);
  Tensor x = random_tensor({1, 64, 64, 3}, rng, 0.0, 1.0);
  StaticResizeSpec spec{16, 16};
  Tensor out = static_resize(x, spec);
  REQUIRE(out.shape() == std::vector<int>{1, 16, 16, 3});

  StaticResizeSpec same{64, 64};
  Tensor out2 = static_resize(x, same);
  for (int64_t i = 0; i < x.size(); ++i) REQUIRE(out2[i] == x[i]);

  Tensor c = Tensor::full({1, 32, 32, 3}, 0.7f);
  Tensor out3 = static_resize(c, spec);
  for (int64_t i = 0; i < out3.size(); ++i) REQUIRE(out3[i] == Catch::Approx(0.7));
}

TEST_CASE("gradients flow into the first HFE conv layer") {
  ParamStore ps;
  Rng rng(10);
  HfeSpec s;
  s.input_h = s.input_w = 32;
  s.target = 8;
  s.use_subsampling_pool = false;
  Hfe hfe(ps, s, rng);
  Rng data_rng(11);
  Tensor x = random_tensor({2, 32, 32, 3}, data_rng, 0.0, 1.0);
  Tape tape;
  Value out = hfe(tape, make_constant(x));
  ps.zero_grads();
  backward(sum_all(leaky_relu(out, 0.3f)));
  tape.harvest();
  double norm = 0.0;
  const Param& k = ps.get("hfe.unit1.conv1.kernel");
  for (int64_t i = 0; i < k.grad.size(); ++i) norm += double(k.grad[i]) * k.grad[i];
  REQUIRE(norm > 0.0);
}

TEST_CASE("resizers are deterministic in inference mode") {
  ParamStore ps;
  Rng rng(12);
  GlrSpec s;
  s.input_h = s.input_w = 40;
  s.target_h = s.target_w = 24;
  Glr glr(ps, s, rng);
  Rng data_rng(13);
  Tensor x = random_tensor({1, 40, 40, 3}, data_rng, 0.0, 1.0);
  Tape t1, t2;
  t1.mode = t2.mode = Mode::Infer;
  Value a = glr(t1, make_constant(x));
  Value b = glr(t2, make_constant(x));
  for (int64_t i = 0; i < a->val.size(); ++i) REQUIRE(a->val[i] == b->val[i]);
}
