#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "rank1/checkpoint.hpp"
#include "rank1/config.hpp"
#include "rank1/data.hpp"
#include "rank1/training.hpp"
#include "rank1/verify.hpp"

using namespace rank1;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::path(::testing::TempDir()) / "rank1_io";
  fs::create_directories(dir);
  return dir / name;
}

void write_bytes(const fs::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<unsigned char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Two 2x3 images with labels 7 and 2.
const std::vector<unsigned char> kImages{0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3,
                                         0, 51, 102, 153, 204, 255, 255, 0, 0, 0, 0, 17};
const std::vector<unsigned char> kLabels{0, 0, 8, 1, 0, 0, 0, 2, 7, 2};

}  // namespace

TEST(Idx, ParsesHandBuiltPair) {
  write_bytes(scratch("a-images"), kImages);
  write_bytes(scratch("a-labels"), kLabels);
  const Dataset d = load_idx(scratch("a-images"), scratch("a-labels"));
  ASSERT_EQ(d.images.shape(), (Shape{2, 1, 2, 3}));
  EXPECT_EQ(d.labels, (std::vector<int>{7, 2}));
  EXPECT_DOUBLE_EQ(d.images(0, 0, 0, 1), 0.2);
  EXPECT_DOUBLE_EQ(d.images(0, 0, 1, 2), 1.0);
  EXPECT_DOUBLE_EQ(d.images(1, 0, 1, 2), 17.0 / 255.0);
}

TEST(Idx, RejectsMalformedFiles) {
  auto images = kImages;
  images[3] = 1;
  write_bytes(scratch("b-images"), images);
  write_bytes(scratch("b-labels"), kLabels);
  EXPECT_THROW(load_idx(scratch("b-images"), scratch("b-labels")), ParseError);

  images = kImages;
  images.pop_back();
  write_bytes(scratch("c-images"), images);
  EXPECT_THROW(load_idx(scratch("c-images"), scratch("b-labels")), ParseError);

  auto labels = kLabels;
  labels[7] = 3;
  labels.push_back(1);
  write_bytes(scratch("d-images"), kImages);
  write_bytes(scratch("d-labels"), labels);
  EXPECT_THROW(load_idx(scratch("d-images"), scratch("d-labels")), ParseError);

  labels = kLabels;
  labels[8] = 12;
  write_bytes(scratch("e-labels"), labels);
  EXPECT_THROW(load_idx(scratch("d-images"), scratch("e-labels")), ValueError);

  write_bytes(scratch("f-images"), {0, 0, 8});
  EXPECT_THROW(load_idx(scratch("f-images"), scratch("b-labels")), ParseError);
  EXPECT_THROW(load_idx(scratch("missing"), scratch("b-labels")), IoError);
}

TEST(Idx, WriteLoadRoundTrip) {
  write_bytes(scratch("g-images"), kImages);
  write_bytes(scratch("g-labels"), kLabels);
  const Dataset d = load_idx(scratch("g-images"), scratch("g-labels"));
  write_idx(d, scratch("h-images"), scratch("h-labels"));
  EXPECT_EQ(read_bytes(scratch("h-images")), kImages);
  EXPECT_EQ(read_bytes(scratch("h-labels")), kLabels);
}

TEST(SynthBlobs, SizeAndDeterminism) {
  const Dataset a = synth_blobs(3, 7, {2, 4, 5}, 11);
  const Dataset b = synth_blobs(3, 7, {2, 4, 5}, 11);
  EXPECT_EQ(a.images.shape(), (Shape{21, 2, 4, 5}));
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.labels[4], 1);
  EXPECT_NE(synth_blobs(3, 7, {2, 4, 5}, 12).images, a.images);
  for (double v : a.images.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_THROW(synth_blobs(1, 5, {1, 2, 2}, 1), ValueError);
}

TEST(SynthBlobs, NearestCentroidSeparates) {
  const std::size_t classes = 5, per = 40, pixels = 64;
  const Dataset d = synth_blobs(classes, per, {1, 8, 8}, 13);
  std::vector<std::vector<double>> centroid(classes, std::vector<double>(pixels));
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t p = 0; p < pixels; ++p) centroid[d.labels[i]][p] += d.images[i * pixels + p] / per;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    std::size_t best = 0;
    double best_dist = 1e300;
    for (std::size_t c = 0; c < classes; ++c) {
      double dist = 0.0;
      for (std::size_t p = 0; p < pixels; ++p) {
        const double e = d.images[i * pixels + p] - centroid[c][p];
        dist += e * e;
      }
      if (dist < best_dist) best_dist = dist, best = c;
    }
    correct += static_cast<int>(best) == d.labels[i];
  }
  EXPECT_GE(static_cast<double>(correct) / d.size(), 0.99);
}

TEST(Batches, SizesAndOrder) {
  const Dataset d = synth_blobs(2, 5, {1, 2, 2}, 1);
  const BatchSequence plain(d, 3, std::nullopt);
  ASSERT_EQ(plain.size(), 4u);
  std::vector<std::size_t> sizes;
  for (std::size_t i = 0; i < plain.size(); ++i) sizes.push_back(plain.indices(i).size());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{3, 3, 3, 1}));
  EXPECT_EQ(plain[3].labels, std::vector<int>{d.labels[9]});
  EXPECT_EQ(plain[3].images.shape(), (Shape{1, 1, 2, 2}));

  const BatchSequence a(d, 3, 42), b(d, 3, 42), c(d, 3, 43);
  EXPECT_EQ(a.order(), b.order());
  EXPECT_NE(a.order(), c.order());
  const std::set<std::size_t> seen(a.order().begin(), a.order().end());
  EXPECT_EQ(seen.size(), 10u);
  EXPECT_EQ(*seen.rbegin(), 9u);
  EXPECT_THROW(BatchSequence(d, 0, std::nullopt), ValueError);
}

TEST(Dataset, SliceAndTake) {
  const Dataset d = synth_blobs(2, 5, {1, 2, 2}, 1);
  const Dataset s = slice(d, 4, 3);
  EXPECT_EQ(s.size(), 3u);
  EXPECT_EQ(s.labels[0], d.labels[4]);
  EXPECT_EQ(s.images[0], d.images[16]);
  EXPECT_EQ(take(d, 0).size(), 10u);
  EXPECT_EQ(take(d, 2).size(), 2u);
  EXPECT_THROW(slice(d, 8, 3), ValueError);
}

class CheckpointModes : public ::testing::TestWithParam<ConvMode> {};

TEST_P(CheckpointModes, BitExactRoundTrip) {
  const Dataset data = synth_blobs(3, 6, {2, 8, 8}, 3);
  NetworkSpec spec{"ckpt", 2, 8, 8, 3, {}};
  spec.layers = {LayerSpec::conv(3), LayerSpec::batchnorm(), LayerSpec::relu(), LayerSpec::maxpool(),
                 LayerSpec::dropout(0.25), LayerSpec::fc(3)};
  TrainConfig cfg;
  cfg.mode = GetParam();
  cfg.batch_size = 6;
  cfg.epochs = 2;
  TrainResult r = train(spec, data, nullptr, cfg);
  const fs::path path = scratch(std::string("net-") + std::string(to_string(GetParam())) + ".ckpt");
  save_checkpoint(r.network, path);
  Network back = load_checkpoint(path);
  EXPECT_EQ(back.mode(), GetParam());
  auto a = r.network.state(), b = back.state();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_EQ(*a[i].value, *b[i].value) << a[i].name;
  }
  EXPECT_EQ(predict(r.network, data), predict(back, data));
  EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(r.network));
}

INSTANTIATE_TEST_SUITE_P(AllModes, CheckpointModes,
                         ::testing::Values(ConvMode::standard, ConvMode::rank1, ConvMode::sequential),
                         [](const auto& info) {
                           return info.param == ConvMode::sequential ? std::string("sequential")
                                                                      : std::string(to_string(info.param));
                         });

TEST(Checkpoint, RejectsBadInput) {
  NetworkSpec empty{"empty", 1, 4, 4, 16, {}};
  EXPECT_THROW(Network(empty, ConvMode::rank1, 1), ShapeError);

  NetworkSpec spec{"small", 1, 4, 4, 2, {LayerSpec::conv(2), LayerSpec::fc(2)}};
  Network net(spec, ConvMode::rank1, 1);
  const std::string bytes = encode_checkpoint(net);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 5)), ParseError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() / 2)), ParseError);
  std::string v2 = bytes;
  v2[10] = '2';
  EXPECT_THROW(decode_checkpoint(v2), ParseError);
  EXPECT_THROW(decode_checkpoint("PNG\n"), ParseError);
  EXPECT_THROW(load_checkpoint(scratch("no-such.ckpt")), IoError);
}

TEST(Config, ParsesKeysAndTypes) {
  const Config c = Config::parse("# run\nmode = rank1\n lr=0.05  # step\nepochs = 3\ndeterministic = yes\n\n");
  EXPECT_EQ(c.get("mode"), "rank1");
  EXPECT_DOUBLE_EQ(c.get_double("lr"), 0.05);
  EXPECT_EQ(c.get_int("epochs"), 3);
  EXPECT_TRUE(c.get_bool("deterministic"));
  EXPECT_EQ(c.get("missing", "x"), "x");
  EXPECT_EQ(c.get_int("batch_size", 32), 32);
  EXPECT_THROW(c.get("missing"), ValueError);
  EXPECT_THROW(c.get_int("lr"), ValueError);
  EXPECT_THROW(c.get_bool("mode"), ValueError);
}

TEST(Config, SyntaxErrors) {
  EXPECT_THROW(Config::parse("a = 1\na = 2\n"), ParseError);
  EXPECT_THROW(Config::parse("just words\n"), ParseError);
  EXPECT_THROW(Config::parse(" = 3\n"), ParseError);
  EXPECT_THROW(Config::load(scratch("missing.cfg")), IoError);
}
