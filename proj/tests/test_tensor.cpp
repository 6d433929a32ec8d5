#include <doctest.h>

#include <cmath>
#include <vector>

#include "attendlight/rng.hpp"
#include "attendlight/tensor.hpp"

using namespace attendlight;

namespace {

// Straightline LSTM in plain double arithmetic; the independent oracle for
// the taped cell.
struct RefLstm {
  int d;
  std::vector<double> Wi, Ui, bi, Wf, Uf, bf, Wo, Uo, bo, Wg, Ug, bg;

  static double sig(double v) { return 1.0 / (1.0 + std::exp(-v)); }

  std::vector<double> matvec(const std::vector<double>& M, const std::vector<double>& x) const {
    std::vector<double> y(d, 0.0);
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c) y[r] += M[r * d + c] * x[c];
    return y;
  }

  void step(const std::vector<double>& x, const std::vector<double>& h,
            const std::vector<double>& c, std::vector<double>& h_out,
            std::vector<double>& c_out, std::vector<double>* i_out = nullptr,
            std::vector<double>* g_out = nullptr) const {
    auto wx_i = matvec(Wi, x), uh_i = matvec(Ui, h);
    auto wx_f = matvec(Wf, x), uh_f = matvec(Uf, h);
    auto wx_o = matvec(Wo, x), uh_o = matvec(Uo, h);
    auto wx_g = matvec(Wg, x), uh_g = matvec(Ug, h);
    h_out.resize(d);
    c_out.resize(d);
    for (int k = 0; k < d; ++k) {
      double i = sig(wx_i[k] + uh_i[k] + bi[k]);
      double f = sig(wx_f[k] + uh_f[k] + bf[k]);
      double o = sig(wx_o[k] + uh_o[k] + bo[k]);
      double g = std::tanh(wx_g[k] + uh_g[k] + bg[k]);
      c_out[k] = f * c[k] + i * g;
      h_out[k] = o * std::tanh(c_out[k]);
      if (i_out) (*i_out)[k] = i;
      if (g_out) (*g_out)[k] = g;
    }
  }
};

std::vector<double> to_vec(const Tensor<double>& t) {
  return std::vector<double>(t.values.begin(), t.values.end());
}

void add_lstm_store(ParamStore<double>& store, int d, Rng& rng) {
  for (const char* g : {"i", "f", "o", "g"}) {
    store.add(std::string("W_") + g, uniform_init<double>({d, d}, d, rng));
    store.add(std::string("U_") + g, uniform_init<double>({d, d}, d, rng));
    store.add(std::string("b_") + g, uniform_init<double>({d}, d, rng));
  }
}

LstmParamRefs<double> lstm_store_refs(Tape<double>& tape, ParamStore<double>& store) {
  return {tape.param(store, "W_i"), tape.param(store, "U_i"), tape.param(store, "b_i"),
          tape.param(store, "W_f"), tape.param(store, "U_f"), tape.param(store, "b_f"),
          tape.param(store, "W_o"), tape.param(store, "U_o"), tape.param(store, "b_o"),
          tape.param(store, "W_g"), tape.param(store, "U_g"), tape.param(store, "b_g")};
}

RefLstm ref_from_store(ParamStore<double>& store, int d) {
  RefLstm ref;
  ref.d = d;
  ref.Wi = to_vec(store.at("W_i").value); ref.Ui = to_vec(store.at("U_i").value);
  ref.bi = to_vec(store.at("b_i").value); ref.Wf = to_vec(store.at("W_f").value);
  ref.Uf = to_vec(store.at("U_f").value); ref.bf = to_vec(store.at("b_f").value);
  ref.Wo = to_vec(store.at("W_o").value); ref.Uo = to_vec(store.at("U_o").value);
  ref.bo = to_vec(store.at("b_o").value); ref.Wg = to_vec(store.at("W_g").value);
  ref.Ug = to_vec(store.at("U_g").value); ref.bg = to_vec(store.at("b_g").value);
  return ref;
}

}  // namespace

TEST_CASE("affine basics") {
  ParamStore<double> store;
  Tensor<double> eye({2, 2});
  eye.at(0, 0) = 1;
  eye.at(1, 1) = 1;
  store.add("W", eye);
  store.add("b", Tensor<double>({2}));

  Tape<double> tape;
  auto x = tape.constant(Tensor<double>::vector_of({3.5, -2.0}));
  auto y = tape.affine(tape.param(store, "W"), x, tape.param(store, "b"));
  CHECK(tape.value(y)[0] == 3.5);
  CHECK(tape.value(y)[1] == -2.0);

  Tensor<double> W2({2, 2});
  W2.at(0, 0) = 1; W2.at(0, 1) = 1; W2.at(1, 0) = 0; W2.at(1, 1) = 1;
  store.add("W2", W2);
  Tape<double> tape2;
  auto x2 = tape2.constant(Tensor<double>::vector_of({1, 2}));
  auto y2 = tape2.affine(tape2.param(store, "W2"), x2, tape2.param(store, "b"));
  CHECK(tape2.value(y2)[0] == 3);
  CHECK(tape2.value(y2)[1] == 2);

  // d(sum y)/db = ones
  store.zero_grads();
  auto loss = tape2.sum(y2);
  tape2.backward(loss);
  CHECK(store.at("b").grad[0] == 1.0);
  CHECK(store.at("b").grad[1] == 1.0);

  Tape<double> bad;
  auto short_x = bad.constant(Tensor<double>::vector_of({1.0}));
  CHECK_THROWS_AS(bad.affine(bad.param(store, "W"), short_x, bad.param(store, "b")),
                  TensorError);
}

TEST_CASE("nonlinearities") {
  Tape<double> tape;
  auto equal = tape.softmax(tape.constant(Tensor<double>::vector_of({2.5, 2.5, 2.5})));
  for (int i = 0; i < 3; ++i) CHECK(tape.value(equal)[i] == doctest::Approx(1.0 / 3));

  auto big = tape.softmax(tape.constant(Tensor<double>::vector_of({1000.0, 1000.0})));
  CHECK(tape.value(big)[0] == doctest::Approx(0.5));
  CHECK(std::isfinite(tape.value(big)[0]));

  auto r = tape.relu_op(tape.constant(Tensor<double>::vector_of({-2.0, 3.0})));
  CHECK(tape.value(r)[0] == 0.0);
  CHECK(tape.value(r)[1] == 3.0);

  auto s = tape.sigmoid_op(tape.constant(Tensor<double>::vector_of({0.0})));
  CHECK(tape.value(s)[0] == doctest::Approx(0.5));

  CHECK_THROWS_AS(tape.softmax(tape.constant(Tensor<double>({0}))), TensorError);
}

TEST_CASE("softmax output is a probability vector on random input") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    int k = 1 + static_cast<int>(rng.uniform_index(8));
    Tensor<double> v({k});
    for (auto& x : v.values) x = rng.uniform(-10, 10);
    Tape<double> tape;
    auto y = tape.softmax(tape.constant(v));
    double total = 0;
    for (int i = 0; i < k; ++i) {
      CHECK(tape.value(y)[i] >= 0.0);
      total += tape.value(y)[i];
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
  }
}

namespace {

ParamStore<double> attention_store(int d, Rng& rng) {
  ParamStore<double> store;
  store.add("W_r", uniform_init<double>({d, d}, d, rng));
  store.add("W_q", uniform_init<double>({d, d}, d, rng));
  store.add("U_r", uniform_init<double>({d, d}, d, rng));
  store.add("U_q", uniform_init<double>({d, d}, d, rng));
  store.add("u_a", uniform_init<double>({d}, d, rng));
  return store;
}

AttentionParamRefs<double> attn_refs(Tape<double>& tape, ParamStore<double>& store) {
  return {tape.param(store, "W_r"), tape.param(store, "W_q"), tape.param(store, "U_r"),
          tape.param(store, "U_q"), tape.param(store, "u_a")};
}

}  // namespace

TEST_CASE("attention degenerate cases") {
  Rng rng(11);
  int d = 4;
  auto store = attention_store(d, rng);

  SUBCASE("singleton reference set gets weight one") {
    Tape<double> tape;
    std::vector<Tape<double>::Ref> refs = {tape.constant(uniform_init<double>({d}, d, rng))};
    auto q = tape.constant(uniform_init<double>({d}, d, rng));
    auto w = attention(tape, refs, q, attn_refs(tape, store));
    CHECK(tape.value(w).size() == 1);
    CHECK(tape.value(w)[0] == doctest::Approx(1.0));
  }
  SUBCASE("identical references get uniform weights") {
    Tape<double> tape;
    auto shared = tape.constant(uniform_init<double>({d}, d, rng));
    std::vector<Tape<double>::Ref> refs(5, shared);
    auto w = attention(tape, refs, shared, attn_refs(tape, store));
    for (int i = 0; i < 5; ++i) CHECK(tape.value(w)[i] == doctest::Approx(0.2));
  }
  SUBCASE("zero u_a gives uniform weights regardless of input") {
    store.at("u_a").value.fill(0.0);
    Tape<double> tape;
    std::vector<Tape<double>::Ref> refs;
    for (int i = 0; i < 4; ++i) refs.push_back(tape.constant(uniform_init<double>({d}, d, rng)));
    auto q = tape.constant(uniform_init<double>({d}, d, rng));
    auto w = attention(tape, refs, q, attn_refs(tape, store));
    for (int i = 0; i < 4; ++i) CHECK(tape.value(w)[i] == doctest::Approx(0.25));
  }
  SUBCASE("empty reference set is rejected") {
    Tape<double> tape;
    std::vector<Tape<double>::Ref> refs;
    auto q = tape.constant(uniform_init<double>({d}, d, rng));
    CHECK_THROWS_AS(attention(tape, refs, q, attn_refs(tape, store)), TensorError);
  }
}

TEST_CASE("attention is equivariant under reference permutation") {
  Rng rng(21);
  for (int d : {4, 8}) {
    auto store = attention_store(d, rng);
    for (int k = 1; k <= 8; ++k) {
      std::vector<Tensor<double>> inputs;
      for (int i = 0; i < k; ++i) inputs.push_back(uniform_init<double>({d}, 1, rng));
      Tensor<double> query = uniform_init<double>({d}, 1, rng);

      Tape<double> tape;
      std::vector<Tape<double>::Ref> refs;
      for (const auto& t : inputs) refs.push_back(tape.constant(t));
      auto w = attention(tape, refs, tape.constant(query), attn_refs(tape, store));

      // rotate the references by one
      Tape<double> tape2;
      std::vector<Tape<double>::Ref> rotated;
      for (int i = 0; i < k; ++i) rotated.push_back(tape2.constant(inputs[(i + 1) % k]));
      auto w2 = attention(tape2, rotated, tape2.constant(query), attn_refs(tape2, store));

      for (int i = 0; i < k; ++i)
        CHECK(tape.value(w)[(i + 1) % k] == doctest::Approx(tape2.value(w2)[i]).epsilon(1e-9));
    }
  }
}

TEST_CASE("lstm cell matches the straightline reference") {
  Rng rng(31);
  int d = 6;
  ParamStore<double> store;
  add_lstm_store(store, d, rng);
  RefLstm ref = ref_from_store(store, d);

  Tensor<double> x = uniform_init<double>({d}, 1, rng);
  Tensor<double> h = uniform_init<double>({d}, 1, rng);
  Tensor<double> c = uniform_init<double>({d}, 1, rng);

  Tape<double> tape;
  auto out = lstm_cell(tape, tape.constant(x), tape.constant(h), tape.constant(c),
                       lstm_store_refs(tape, store));
  std::vector<double> h_ref, c_ref;
  ref.step(to_vec(x), to_vec(h), to_vec(c), h_ref, c_ref);
  for (int i = 0; i < d; ++i) {
    CHECK(tape.value(out.h)[i] == doctest::Approx(h_ref[i]).epsilon(1e-12));
    CHECK(tape.value(out.c)[i] == doctest::Approx(c_ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("lstm cell with zero parameters and zero cell is inert") {
  int d = 4;
  ParamStore<double> store;
  for (const char* g : {"i", "f", "o", "g"}) {
    store.add(std::string("W_") + g, Tensor<double>({d, d}));
    store.add(std::string("U_") + g, Tensor<double>({d, d}));
    store.add(std::string("b_") + g, Tensor<double>({d}));
  }
  Tape<double> tape;
  auto out = lstm_cell(tape, tape.constant(Tensor<double>({d})), tape.constant(Tensor<double>({d})),
                       tape.constant(Tensor<double>({d})), lstm_store_refs(tape, store));
  for (int i = 0; i < d; ++i) {
    CHECK(tape.value(out.h)[i] == 0.0);
    CHECK(tape.value(out.c)[i] == 0.0);
  }
}

TEST_CASE("large forget bias approaches the additive-cell limit") {
  Rng rng(41);
  int d = 5;
  ParamStore<double> store;
  add_lstm_store(store, d, rng);
  store.at("b_f").value.fill(25.0);  // forget gate ~ 1
  RefLstm ref = ref_from_store(store, d);

  Tensor<double> x = uniform_init<double>({d}, 1, rng);
  Tensor<double> h = uniform_init<double>({d}, 1, rng);
  Tensor<double> c = uniform_init<double>({d}, 1, rng);

  Tape<double> tape;
  auto out = lstm_cell(tape, tape.constant(x), tape.constant(h), tape.constant(c),
                       lstm_store_refs(tape, store));
  std::vector<double> h_ref(d), c_ref(d), i_gate(d), g_cand(d);
  ref.step(to_vec(x), to_vec(h), to_vec(c), h_ref, c_ref, &i_gate, &g_cand);
  for (int k = 0; k < d; ++k) {
    double additive = c.values[static_cast<std::size_t>(k)] + i_gate[k] * g_cand[k];
    CHECK(tape.value(out.c)[k] == doctest::Approx(additive).epsilon(1e-8));
  }
}

TEST_CASE("lstm gradient wrt input matches finite differences") {
  Rng rng(51);
  int d = 4;
  ParamStore<double> store;
  add_lstm_store(store, d, rng);
  store.add("x", uniform_init<double>({d}, 1, rng));

  auto loss_fn = [&](ParamStore<double>& s) {
    Tape<double> tape;
    tape.set_grad_enabled(false);
    auto out = lstm_cell(tape, tape.param(s, "x"),
                         tape.constant(uniform_init<double>({d}, 1, rng)),  // placeholder
                         tape.constant(Tensor<double>({d})), lstm_store_refs(tape, s));
    return tape.value(tape.sum(out.h))[0];
  };
  // The lambda above must be deterministic: freeze h.
  Tensor<double> h = uniform_init<double>({d}, 1, rng);
  auto frozen_fn = [&](ParamStore<double>& s) {
    Tape<double> tape;
    tape.set_grad_enabled(false);
    auto out = lstm_cell(tape, tape.param(s, "x"), tape.constant(h),
                         tape.constant(Tensor<double>({d})), lstm_store_refs(tape, s));
    return tape.value(tape.sum(out.h))[0];
  };
  (void)loss_fn;

  store.zero_grads();
  Tape<double> tape;
  auto out = lstm_cell(tape, tape.param(store, "x"), tape.constant(h),
                       tape.constant(Tensor<double>({d})), lstm_store_refs(tape, store));
  tape.backward(tape.sum(out.h));
  double err = finite_diff_check<double>(frozen_fn, store, 1e-6, 1e-4);
  CHECK(err < 1e-4);
}

TEST_CASE("backward basics") {
  ParamStore<double> store;
  store.add("p", Tensor<double>::vector_of({1.0, 2.0, 3.0}));

  SUBCASE("loss = sum params gives unit gradients") {
    Tape<double> tape;
    auto loss = tape.sum(tape.param(store, "p"));
    tape.backward(loss);
    for (int i = 0; i < 3; ++i) CHECK(store.at("p").grad[i] == 1.0);
  }
  SUBCASE("zero-scaled loss gives zero gradients") {
    store.zero_grads();
    Tape<double> tape;
    auto loss = tape.scale(tape.sum(tape.param(store, "p")), 0.0);
    tape.backward(loss);
    for (int i = 0; i < 3; ++i) CHECK(store.at("p").grad[i] == 0.0);
  }
  SUBCASE("loss must be scalar and on the tape") {
    Tape<double> tape;
    auto p = tape.param(store, "p");
    CHECK_THROWS_AS(tape.backward(p), TensorError);
    CHECK_THROWS_AS(tape.backward(999), TensorError);
  }
}

TEST_CASE("composite attention+affine graph passes finite differences") {
  Rng rng(61);
  int d = 4;
  auto store = attention_store(d, rng);
  store.add("W", uniform_init<double>({d, d}, d, rng));
  store.add("b", uniform_init<double>({d}, d, rng));

  std::vector<Tensor<double>> inputs;
  for (int i = 0; i < 3; ++i) inputs.push_back(uniform_init<double>({d}, 1, rng));
  Tensor<double> query = uniform_init<double>({d}, 1, rng);

  auto build = [&](ParamStore<double>& s, Tape<double>& tape) {
    std::vector<Tape<double>::Ref> refs;
    for (const auto& t : inputs)
      refs.push_back(tape.affine(tape.param(s, "W"), tape.constant(t), tape.param(s, "b")));
    auto w = attention(tape, refs, tape.constant(query), attn_refs(tape, s));
    auto z = tape.weighted_sum(w, refs);
    return tape.sum(tape.tanh_op(z));
  };
  auto loss_fn = [&](ParamStore<double>& s) {
    Tape<double> tape;
    tape.set_grad_enabled(false);
    return tape.value(build(s, tape))[0];
  };

  store.zero_grads();
  Tape<double> tape;
  tape.backward(build(store, tape));
  double err = finite_diff_check<double>(loss_fn, store, 1e-6, 1e-4);
  CHECK(err < 1e-4);
}

TEST_CASE("adam properties") {
  SUBCASE("first step moves by about the learning rate") {
    ParamStore<double> store;
    store.add("p", Tensor<double>::vector_of({1.0}));
    store.at("p").grad[0] = 0.37;
    adam_step(store, 0.01);
    CHECK(std::abs(1.0 - store.at("p").value[0]) == doctest::Approx(0.01).epsilon(1e-6));
    CHECK(store.at("p").grad[0] == 0.0);
    CHECK(store.at("p").step == 1);
  }
  SUBCASE("zero gradient leaves parameters unchanged from init") {
    ParamStore<double> store;
    store.add("p", Tensor<double>::vector_of({2.0}));
    adam_step(store, 0.01);
    CHECK(store.at("p").value[0] == 2.0);
  }
  SUBCASE("lr = 0 is the identity") {
    ParamStore<double> store;
    store.add("p", Tensor<double>::vector_of({2.0}));
    store.at("p").grad[0] = 5.0;
    adam_step(store, 0.0);
    CHECK(store.at("p").value[0] == 2.0);
  }
  SUBCASE("identical problems step identically") {
    ParamStore<double> a, b;
    a.add("p", Tensor<double>::vector_of({1.0}));
    b.add("p", Tensor<double>::vector_of({1.0}));
    for (int i = 0; i < 5; ++i) {
      a.at("p").grad[0] = 0.1 * (i + 1);
      b.at("p").grad[0] = 0.1 * (i + 1);
      adam_step(a, 0.005);
      adam_step(b, 0.005);
      CHECK(a.at("p").value[0] == b.at("p").value[0]);
    }
  }
}

TEST_CASE("finite_diff_check on a quadratic and as a negative control") {
  ParamStore<double> store;
  store.add("x", Tensor<double>::vector_of({3.0}));
  auto fn = [](ParamStore<double>& s) {
    double x = s.at("x").value[0];
    return x * x;
  };
  store.at("x").grad[0] = 6.0;  // analytic d(x^2)/dx at 3
  CHECK(finite_diff_check<double>(fn, store, 1e-6, 1e-8) < 1e-8);

  store.at("x").grad[0] = 5.0;  // corrupted
  CHECK(finite_diff_check<double>(fn, store, 1e-6, 1e-4) > 1e-4);
}
