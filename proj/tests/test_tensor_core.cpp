#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>

#include "partyvec/error.hpp"
#include "partyvec/rng.hpp"
#include "partyvec/tensor.hpp"
#include "partyvec/tensor_store.hpp"

using namespace partyvec;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::IoError;
}

std::vector<std::uint8_t> bytes_of(std::string_view s) { return {s.begin(), s.end()}; }

}  // namespace

TEST_CASE("tensor rejects shape/data disagreement and non-finite values") {
  CHECK(code_of([] { Tensor({2, 2}, {1, 2, 3}); }) == ErrorCode::ShapeMismatch);
  CHECK(code_of([] { Tensor({1}, {NAN}); }) == ErrorCode::NonFiniteValue);
  CHECK(code_of([] { Tensor({1}, {INFINITY}); }) == ErrorCode::NonFiniteValue);
  const Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t.at(1, 2) == 6.0f);
}

TEST_CASE("matvec") {
  SUBCASE("identity") {
    const Tensor I({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    const auto out = matvec(I, Tensor::from_vector({1, 2, 3}));
    CHECK(std::vector<float>(out.data().begin(), out.data().end()) == std::vector<float>{1, 2, 3});
  }
  SUBCASE("zero matrix") {
    const auto out = matvec(Tensor::zeros({2, 3}), Tensor::from_vector({4, -5, 6}));
    CHECK(std::all_of(out.data().begin(), out.data().end(), [](float x) { return x == 0.0f; }));
  }
  SUBCASE("hand-evaluated 2x2") {
    const auto out = matvec(Tensor({2, 2}, {1, 2, 3, 4}), Tensor::from_vector({1, 1}));
    CHECK(out[0] == 3.0f);
    CHECK(out[1] == 7.0f);
  }
  SUBCASE("shape mismatch") {
    CHECK(code_of([] { matvec(Tensor({2, 2}, {1, 2, 3, 4}), Tensor::from_vector({1, 1, 1})); }) ==
          ErrorCode::ShapeMismatch);
  }
  SUBCASE("matches a transposed double loop on random shapes") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t r = 1 + rng.below(9), c = 1 + rng.below(9);
      std::vector<float> m(r * c), v(c);
      for (auto& x : m) x = static_cast<float>(rng.normal());
      for (auto& x : v) x = static_cast<float>(rng.normal());
      const auto out = matvec(Tensor({r, c}, m), Tensor::from_vector(v));
      // Reference walks the transpose column by column.
      std::vector<double> ref(r, 0.0);
      for (std::size_t j = 0; j < c; ++j) {
        for (std::size_t i = 0; i < r; ++i) ref[i] += static_cast<double>(m[i * c + j]) * v[j];
      }
      for (std::size_t i = 0; i < r; ++i) {
        CHECK(std::abs(out[i] - ref[i]) <= 1e-6 * std::max(1.0, std::abs(ref[i])));
      }
    }
  }
}

TEST_CASE("cosine") {
  const std::vector<float> v{0.3f, -2.0f, 5.0f};
  CHECK(cosine(v, v) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cosine(std::vector<float>{1, 0}, std::vector<float>{0, 1}) == 0.0);
  CHECK(cosine(std::vector<float>{1, 1, 0}, std::vector<float>{1, 0, 0}) == doctest::Approx(0.70710678).epsilon(1e-6));
  CHECK(code_of([] { cosine(std::vector<float>{0, 0}, std::vector<float>{1, 0}); }) == ErrorCode::ZeroNormVector);

  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<float> a(6), b(6), sa(6);
    const double s = 0.01 + 10.0 * rng.uniform();
    for (std::size_t i = 0; i < 6; ++i) {
      a[i] = static_cast<float>(rng.normal());
      b[i] = static_cast<float>(rng.normal());
      sa[i] = static_cast<float>(s * a[i]);
    }
    const double c = cosine(a, b);
    CHECK(c >= -1.0);
    CHECK(c <= 1.0);
    CHECK(std::abs(c - cosine(b, a)) <= 1e-6);
    CHECK(std::abs(c - cosine(sa, b)) <= 1e-6);
  }
}

TEST_CASE("container: empty store") {
  const TensorStore empty;
  const auto bytes = empty.serialize();
  REQUIRE(bytes.size() == 10);
  std::uint64_t h = 0;
  for (int i = 7; i >= 0; --i) h = (h << 8) | bytes[static_cast<std::size_t>(i)];
  CHECK(h == 2);
  CHECK(bytes[8] == '{');
  CHECK(bytes[9] == '}');
  CHECK(TensorStore::parse(bytes).empty());
}

TEST_CASE("container: byte layout of a single tensor") {
  TensorStore s;
  s.insert("w", Tensor({2, 2}, {1.0f, -2.0f, 0.5f, 3.0f}));
  const auto bytes = s.serialize();
  const std::string header = R"({"w":{"dtype":"F32","shape":[2,2],"data_offsets":[0,16]}})";
  REQUIRE(bytes.size() == 8 + header.size() + 16);
  std::uint64_t h = 0;
  for (int i = 7; i >= 0; --i) h = (h << 8) | bytes[static_cast<std::size_t>(i)];
  CHECK(h == header.size());
  CHECK(std::string(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(h)) == header);
  // Payload is little-endian IEEE-754 binary32.
  const float expected[4] = {1.0f, -2.0f, 0.5f, 3.0f};
  std::uint8_t raw[16];
  std::memcpy(raw, expected, 16);
  CHECK(std::equal(raw, raw + 16, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(h)));

  const auto back = TensorStore::parse(bytes);
  CHECK(back == s);
  CHECK(back.serialize() == bytes);
}

TEST_CASE("container: insertion order does not matter") {
  Rng rng(3);
  std::vector<std::pair<std::string, Tensor>> items;
  for (const char* name : {"b.layer", "a", "layer.10.mlp_k", "layer.2.mlp_k"}) {
    std::vector<float> data(6);
    for (auto& x : data) x = static_cast<float>(rng.normal());
    items.emplace_back(name, Tensor({2, 3}, data));
  }
  TensorStore first;
  for (const auto& [n, t] : items) first.insert(n, t);
  for (int round = 0; round < 10; ++round) {
    rng.shuffle(items);
    TensorStore other;
    for (const auto& [n, t] : items) other.insert(n, t);
    CHECK(other.serialize() == first.serialize());
    const auto back = TensorStore::parse(other.serialize());
    for (const auto& [n, t] : items) CHECK(back.get(n) == t);
  }
  const auto manifest = first.manifest();
  std::uint64_t expect = 0;
  for (const auto& [name, info] : manifest) {
    CHECK(info.begin == expect);
    expect = info.end;
  }
}

TEST_CASE("container: malformed inputs") {
  CHECK(code_of([] { TensorStore::parse(bytes_of("abc")); }) == ErrorCode::MalformedHeader);

  auto framed = [](const std::string& header, std::size_t payload) {
    std::vector<std::uint8_t> out(8);
    std::uint64_t n = header.size();
    for (int i = 0; i < 8; ++i) out[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(n >> (8 * i));
    out.insert(out.end(), header.begin(), header.end());
    out.resize(out.size() + payload, 0);
    return out;
  };
  CHECK(code_of([&] { TensorStore::parse(framed("{not json", 0)); }) == ErrorCode::MalformedHeader);
  CHECK(code_of([&] {
          TensorStore::parse(framed(R"({"x":{"dtype":"F16","shape":[1],"data_offsets":[0,2]}})", 2));
        }) == ErrorCode::MalformedHeader);
  CHECK(code_of([&] {
          TensorStore::parse(framed(R"({"x":{"dtype":"F32","shape":[2],"data_offsets":[0,8]}})", 4));
        }) == ErrorCode::TruncatedPayload);
  CHECK(code_of([&] {
          TensorStore::parse(framed(R"({"x":{"dtype":"F32","shape":[2],"data_offsets":[0,8]},)"
                                    R"("y":{"dtype":"F32","shape":[2],"data_offsets":[4,12]}})",
                                    12));
        }) == ErrorCode::OffsetOverlap);
}

TEST_CASE("container: file round trip is byte exact") {
  TensorStore s;
  s.insert("embed", Tensor({3, 2}, {0.1f, 0.2f, 0.3f, 0.4f, 0.5f, 0.6f}));
  s.insert("bias", Tensor::from_vector({1e-30f, -7.25f}));
  const auto path = std::filesystem::temp_directory_path() / "partyvec_test_store.pvt";
  store_write(s, path);
  CHECK(read_file_bytes(path) == s.serialize());
  CHECK(store_read(path) == s);
  std::filesystem::remove(path);
}

TEST_CASE("rng streams are reproducible and distinct") {
  Rng a(42, "x"), b(42, "x"), c(42, "y");
  for (int i = 0; i < 10; ++i) {
    const auto va = a.next_u64();
    CHECK(va == b.next_u64());
    CHECK(va != c.next_u64());
  }
  CHECK(hex64(fnv1a64("")) == "cbf29ce484222325");
  CHECK(hex64(fnv1a64("a")) == "af63dc4c8601ec8c");
}
