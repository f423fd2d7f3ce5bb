#include <gtest/gtest.h>

#include <clocale>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <locale>

#include "noisynet/data_io.hpp"
#include "noisynet/dataset.hpp"
#include "test_paths.hpp"

using namespace noisynet;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("noisynet_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

std::vector<unsigned char> cifar_records(std::size_t n, unsigned char first_label) {
  std::vector<unsigned char> b;
  for (std::size_t r = 0; r < n; ++r) {
    b.push_back(static_cast<unsigned char>((first_label + r) % 10));
    for (std::size_t k = 0; k < 3072; ++k) b.push_back(static_cast<unsigned char>((r * 7 + k) % 256));
  }
  return b;
}

void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>(v >> s));
}

// Minimal IDX reader kept independent of the library: returns the raw pixel
// bytes of image `i` and all labels.
struct RawIdx {
  std::uint32_t n, h, w;
  std::vector<unsigned char> pixels, labels;
};

RawIdx read_idx(const fs::path& images, const fs::path& labels) {
  RawIdx r{};
  std::ifstream im(images, std::ios::binary), lb(labels, std::ios::binary);
  unsigned char head[16];
  im.read(reinterpret_cast<char*>(head), 16);
  auto be = [](const unsigned char* p) { return (std::uint32_t(p[0]) << 24) | (p[1] << 16) | (p[2] << 8) | p[3]; };
  r.n = be(head + 4);
  r.h = be(head + 8);
  r.w = be(head + 12);
  r.pixels.resize(std::size_t{r.n} * r.h * r.w);
  im.read(reinterpret_cast<char*>(r.pixels.data()), static_cast<std::streamsize>(r.pixels.size()));
  lb.read(reinterpret_cast<char*>(head), 8);
  r.labels.resize(r.n);
  lb.read(reinterpret_cast<char*>(r.labels.data()), r.n);
  return r;
}

Checkpoint sample_checkpoint(bool quant) {
  QuantOptions q;
  q.enabled = quant;
  q.activation_scaling = ScalingMode::Constant;
  q.constant_scale = 2.0;
  auto model = make_model<float>(build_mini("lenet5", 0.25, 1.0, {1, 28, 28}), 7, q);
  for (std::size_t s = 0; s < model.quant.calibration.size(); ++s)
    model.quant.calibration[s] = {-0.1 * static_cast<double>(s), 0.3 + static_cast<double>(s), 0.99, true, true};
  TrainConfig tc;
  tc.epochs = 3;
  tc.sigma_train = 0.125;
  tc.seed = 7;
  return make_checkpoint(model, tc, 7);
}

struct CommaDecimal : std::numpunct<char> {
  char do_decimal_point() const override { return ','; }
  char do_thousands_sep() const override { return '.'; }
  std::string do_grouping() const override { return "\3"; }
};

}  // namespace

TEST(Cifar, ReadsBatchesChannelMajor) {
  const auto dir = scratch("cifar");
  for (int b = 1; b <= 5; ++b) write_bytes(dir / ("data_batch_" + std::to_string(b) + ".bin"), cifar_records(3, 2));
  write_bytes(dir / "test_batch.bin", cifar_records(2, 9));
  const auto split = load_cifar10(dir);
  EXPECT_EQ(split.train.size(), 15u);
  EXPECT_EQ(split.test.size(), 2u);
  EXPECT_EQ(split.train.images.shape(), (Shape{15, 3, 32, 32}));
  EXPECT_EQ(split.train.labels[0], 2);  // raw first byte of batch 1
  EXPECT_EQ(split.test.labels[1], 0);
  // record 1, green channel, row 2, col 5 -> byte 1024 + 2*32 + 5 of the record
  EXPECT_EQ(split.train.images.at(1, 1, 2, 5), static_cast<float>((7 + 1024 + 69) % 256) / 255.0f);
  for (float v : split.train.images.data()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
}

TEST(Cifar, RejectsBadFiles) {
  const auto dir = scratch("cifar_bad");
  auto short_file = cifar_records(1, 0);
  short_file.pop_back();
  write_bytes(dir / "a.bin", short_file);
  std::vector<float> px;
  std::vector<int> labels;
  EXPECT_THROW(append_cifar_batch(dir / "a.bin", px, labels), DataError);
  auto bad_label = cifar_records(1, 0);
  bad_label[0] = 10;
  write_bytes(dir / "b.bin", bad_label);
  EXPECT_THROW(append_cifar_batch(dir / "b.bin", px, labels), DataError);
  EXPECT_THROW(load_cifar10(dir / "missing"), DataError);
}

TEST(Idx, SyntheticFilesAndErrors) {
  const auto dir = scratch("idx");
  std::vector<unsigned char> im, lb;
  put_be32(im, 0x803);
  put_be32(im, 3);
  put_be32(im, 2);
  put_be32(im, 2);
  for (unsigned char v = 0; v < 12; ++v) im.push_back(static_cast<unsigned char>(v * 20));
  put_be32(lb, 0x801);
  put_be32(lb, 3);
  for (unsigned char v : {7, 0, 9}) lb.push_back(v);
  write_bytes(dir / "im", im);
  write_bytes(dir / "lb", lb);
  const auto ds = load_mnist_idx(dir / "im", dir / "lb");
  EXPECT_EQ(ds.images.shape(), (Shape{3, 1, 2, 2}));
  EXPECT_EQ(ds.labels, (std::vector<int>{7, 0, 9}));
  EXPECT_EQ(ds.images.at(1, 0, 1, 0), 120.0f / 255.0f);

  write_bytes(dir / "cifar", cifar_records(1, 0));
  EXPECT_THROW(load_mnist_idx(dir / "cifar", dir / "lb"), DataError);
  EXPECT_THROW(load_mnist_idx(dir / "im", dir / "im"), DataError);
  auto lb4 = lb;
  lb4[7] = 4;
  lb4.push_back(1);
  write_bytes(dir / "lb4", lb4);
  EXPECT_THROW(load_mnist_idx(dir / "im", dir / "lb4"), DataError);
  im.pop_back();
  write_bytes(dir / "im_short", im);
  EXPECT_THROW(load_mnist_idx(dir / "im_short", dir / "lb"), DataError);
}

TEST(Idx, BundledSubsetMatchesIndependentReader) {
  const fs::path dir = fs::path(NOISYNET_SOURCE_DIR) / "data" / "mnist5k";
  if (!fs::exists(dir / "images-idx3-ubyte")) GTEST_SKIP() << "bundled MNIST subset not present";
  const auto ds = load_mnist_idx(dir / "images-idx3-ubyte", dir / "labels-idx1-ubyte");
  const auto raw = read_idx(dir / "images-idx3-ubyte", dir / "labels-idx1-ubyte");
  ASSERT_EQ(ds.size(), raw.n);
  EXPECT_EQ(raw.h, 28u);
  std::uint64_t lib = 0, ref = 0;
  for (std::size_t i = 0; i < 784; ++i) {
    lib += static_cast<std::uint64_t>(std::lround(ds.images[i] * 255.0f)) * (i + 1);
    ref += static_cast<std::uint64_t>(raw.pixels[i]) * (i + 1);
  }
  EXPECT_EQ(lib, ref);
  for (std::size_t i = 0; i < raw.n; ++i) ASSERT_EQ(ds.labels[i], raw.labels[i]);
  std::vector<int> hist(10);
  for (int l : ds.labels) ++hist[static_cast<std::size_t>(l)];
  for (int h : hist) EXPECT_EQ(h, 500);
}

TEST(Subset, StratifiedAndDeterministic) {
  Dataset pool;
  pool.images = Tensor<float>({103, 1, 1, 1});
  for (std::size_t i = 0; i < 103; ++i) {
    pool.labels.push_back(static_cast<int>(i % 10));
    pool.images[i] = static_cast<float>(i);
  }
  const auto a = stratified_indices(pool, 37, 4), b = stratified_indices(pool, 37, 4), c = stratified_indices(pool, 37, 5);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  std::vector<int> hist(10);
  for (auto i : a) ++hist[static_cast<std::size_t>(pool.labels[i])];
  EXPECT_LE(*std::max_element(hist.begin(), hist.end()) - *std::min_element(hist.begin(), hist.end()), 1);
  EXPECT_EQ(std::set<std::size_t>(a.begin(), a.end()).size(), 37u);

  auto all = stratified_indices(pool, 103, 1);
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 103; ++i) EXPECT_EQ(all[i], i);
  EXPECT_THROW(stratified_indices(pool, 104, 1), ConfigError);

  const auto split = split_stratified(pool, 60, 30, 2);
  EXPECT_EQ(split.train.size(), 60u);
  EXPECT_EQ(split.test.size(), 30u);
  std::set<float> seen(split.train.images.data().begin(), split.train.images.data().end());
  for (float v : split.test.images.data()) EXPECT_FALSE(seen.count(v)) << v;
  std::vector<int> th(10);
  for (int l : split.test.labels) ++th[static_cast<std::size_t>(l)];
  for (int h : th) EXPECT_EQ(h, 3);
}

TEST(Checkpoint, RoundTripIsExact) {
  for (bool quant : {false, true}) {
    const auto c = sample_checkpoint(quant);
    const auto bytes = encode_checkpoint(c);
    EXPECT_EQ(decode_checkpoint(bytes), c);
    EXPECT_EQ(encode_checkpoint(decode_checkpoint(bytes)), bytes);
    const auto model = model_from_checkpoint<float>(decode_checkpoint(bytes));
    EXPECT_EQ(model.params[0], c.tensors[0].value);
    if (quant) EXPECT_EQ(model.quant.calibration, c.calibration);
  }
  const auto dir = scratch("ckpt");
  const auto c = sample_checkpoint(true);
  save_checkpoint(dir / "m.bin", c);
  EXPECT_EQ(load_checkpoint(dir / "m.bin"), c);
}

TEST(Checkpoint, ContainerLayout) {
  const auto bytes = encode_checkpoint(sample_checkpoint(false));
  ASSERT_GE(bytes.size(), 64u);
  EXPECT_EQ(bytes.substr(0, 8), "NOISYNET");
  auto u64 = [&](std::size_t at) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(bytes[at + static_cast<std::size_t>(i)]);
    return v;
  };
  EXPECT_EQ(u64(8) & 0xFFFFFFFFu, 1u);
  const std::uint64_t header = u64(16), payload = u64(24);
  const std::uint64_t start = 64 + (header + 63) / 64 * 64;
  EXPECT_EQ(start + payload, bytes.size());
  EXPECT_EQ(start % 64, 0u);
  // FNV-1a 64 over everything after the fixed block
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t i = 64; i < bytes.size(); ++i) {
    h ^= static_cast<unsigned char>(bytes[i]);
    h *= 0x100000001b3ull;
  }
  EXPECT_EQ(h, u64(32));
  // first weight stored little-endian at the payload start
  const auto c = sample_checkpoint(false);
  float first;
  std::memcpy(&first, bytes.data() + start, 4);
  EXPECT_EQ(first, c.tensors[0].value[0]);
}

TEST(Checkpoint, HeaderMatchesGoldenFixture) {
  const auto bytes = encode_checkpoint(sample_checkpoint(true));
  std::uint64_t header = 0;
  for (int i = 7; i >= 0; --i) header = (header << 8) | static_cast<unsigned char>(bytes[16 + static_cast<std::size_t>(i)]);
  const std::string golden = read_text_file(fs::path(NOISYNET_SOURCE_DIR) / "tests" / "data" / "checkpoint_header.txt");
  EXPECT_EQ(bytes.substr(64, header), golden);
}

TEST(Checkpoint, CorruptionTruncationAndVersion) {
  const auto good = encode_checkpoint(sample_checkpoint(false));
  auto flipped = good;
  flipped[flipped.size() - 5] ^= 0x10;
  try {
    decode_checkpoint(flipped);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("integrity"), std::string::npos);
  }
  EXPECT_THROW(decode_checkpoint(good.substr(0, good.size() - 64)), DataError);
  EXPECT_THROW(decode_checkpoint(good.substr(0, 40)), DataError);
  auto version = good;
  version[8] = 2;
  try {
    decode_checkpoint(version);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos);
  }
  auto magic = good;
  magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(magic), DataError);
}

TEST(Checkpoint, ShapeTableInconsistency) {
  auto c = sample_checkpoint(false);
  std::swap(c.tensors[0], c.tensors[1]);
  EXPECT_THROW(decode_checkpoint(encode_checkpoint(c)), DataError);
  c = sample_checkpoint(false);
  c.tensors.pop_back();
  EXPECT_THROW(decode_checkpoint(encode_checkpoint(c)), DataError);
  c = sample_checkpoint(false);
  c.tensors[2].value = c.tensors[2].value.reshaped({c.tensors[2].value.size()});
  EXPECT_THROW(decode_checkpoint(encode_checkpoint(c)), DataError);
}

TEST(HistoryCsv, RoundTrip) {
  TrainHistory h;
  h.epochs.push_back({0, 1e-3, 2.302585092994046, 0.1, 0.125, 0.1});
  h.epochs.push_back({1, 9.5e-4, 1.0 / 3.0, 0.55, 0.6, 0.2});
  const auto text = format_history_csv(h);
  EXPECT_EQ(text.substr(0, text.find('\n')), "epoch,lr,train_loss,train_accuracy,test_accuracy,test_accuracy_noisy");
  EXPECT_EQ(parse_history_csv(text), h);
  EXPECT_THROW(parse_history_csv("epoch,lr\n"), DataError);
}

TEST(SweepCsv, HeaderRoundTripAndErrors) {
  SweepResult s;
  s.meta.seed = 3;
  s.meta.model_id = "lenet5";
  s.meta.quant_mode = "constant";
  s.meta.scale_factor = 0.5;
  s.meta.bit_width = 8;
  s.meta.placement = Placement::single(4);
  s.rows = {{0.0, 0, 0.75}, {0.0, 1, 0.7}, {0.1, 0, 1.0 / 3.0}, {0.1, 1, 0.1}};
  const auto text = format_sweep_csv(s);
  EXPECT_EQ(text.substr(0, text.find('\n')),
            "sigma,repeat,accuracy,seed,model_id,quant_mode,scale_factor,bit_width,noise_model,placement");
  EXPECT_NE(text.find("0.1,0,0.3333333333333333,3,lenet5,constant,0.5,8,additive_activation,single:4"),
            std::string::npos);
  const auto back = parse_sweep_csv(text);
  EXPECT_EQ(back.rows, s.rows);
  EXPECT_EQ(back.meta, s.meta);

  auto bad = text;
  bad.insert(bad.find("0.1,1,"), "0.2,x,0.5,3,lenet5,constant,0.5,8,additive_activation,single:4\n");
  try {
    parse_sweep_csv(bad, "s.csv");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("s.csv:5"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_sweep_csv("sigma,repeat\n"), DataError);
  EXPECT_THROW(parse_sweep_csv(std::string(kSweepHeader) + "\n"), DataError);
}

TEST(FitSummary, RoundTrip) {
  FitSummary f;
  f.meta.model_id = "vgg11";
  f.meta.quant_mode = "dynamic";
  f.meta.bit_width = 4;
  f.meta.seed = 9;
  f.peak_accuracy = 0.71;
  f.fit.mu = 0.3000001;
  f.fit.s = 0.05;
  f.fit.da = 0.325;
  f.fit.a_min = 0.1;
  f.fit.mu_std = 1e-3;
  for (int i = 0; i < 16; ++i) f.fit.covariance(i / 4, i % 4) = 1e-6 * (i + 1) / 3.0;
  f.fit.sse = 12.5;
  f.fit.residual_norm = std::sqrt(12.5);
  f.fit.iterations = 17;
  f.fit.converged = true;
  f.fit.dy_floor = 5e-4;
  f.fit.points = 20;
  const auto text = format_fit_summary(f);
  EXPECT_EQ(text.substr(0, text.find('\n')), "format=noisynet-fit 1");
  const auto back = parse_fit_summary(text);
  EXPECT_EQ(format_fit_summary(back), text);
  EXPECT_EQ(back.fit.mu, f.fit.mu);
  EXPECT_EQ(back.fit.covariance, f.fit.covariance);
  EXPECT_EQ(back.meta, f.meta);
  EXPECT_THROW(parse_fit_summary("format=other\n"), DataError);
}

TEST(Formats, LocaleIndependent) {
  const std::locale previous = std::locale::global(std::locale(std::locale::classic(), new CommaDecimal));
  const char* c_prev = std::setlocale(LC_NUMERIC, nullptr);
  const std::string saved = c_prev ? c_prev : "C";
  std::setlocale(LC_NUMERIC, "de_DE.UTF-8");  // may be unavailable; the C++ locale above still applies
  SweepResult s;
  s.meta.model_id = "m";
  s.meta.scale_factor = 2.5;
  s.rows = {{0.5, 0, 0.25}, {1.5, 0, 0.125}};
  const auto text = format_sweep_csv(s);
  const auto ckpt = encode_checkpoint(sample_checkpoint(true));
  const auto spec_text = serialize_spec(build_mini("lenet5", 0.5, 1.0));
  const auto back = parse_sweep_csv(text);
  const auto ck_back = decode_checkpoint(ckpt);
  std::locale::global(previous);
  std::setlocale(LC_NUMERIC, saved.c_str());
  EXPECT_NE(text.find("0.5,0,0.25"), std::string::npos);
  EXPECT_NE(text.find(",2.5,"), std::string::npos);
  EXPECT_EQ(back.rows, s.rows);
  EXPECT_EQ(ck_back, sample_checkpoint(true));
  EXPECT_EQ(spec_text, serialize_spec(build_mini("lenet5", 0.5, 1.0)));
  EXPECT_EQ(text::parse_double<DataError>("1.25", "x"), 1.25);
  EXPECT_THROW(text::parse_double<DataError>("1,25", "x"), DataError);
}

TEST(KeyValues, ParseErrorsNameTheLine) {
  try {
    text::KeyValues::parse("a=1\n# note\nbroken\n", "cfg");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("cfg:3"), std::string::npos);
  }
  EXPECT_THROW(text::KeyValues::parse("a=1\na=2\n", "cfg"), DataError);
  const auto kv = text::KeyValues::parse(" a = 1 \n\nb=x=y\n", "cfg");
  EXPECT_EQ(kv.get("a"), "1");
  EXPECT_EQ(kv.get("b"), "x=y");
}
