#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "fagan/attributes.hpp"
#include "fagan/dataset.hpp"
#include "fagan/error.hpp"
#include "fagan/image.hpp"
#include "support.hpp"

using namespace fagan;
namespace ft = fagan::test_support;
using ft::TempDir;

namespace {

AttributeSchema garment_schema() {
  return AttributeSchema::load(std::filesystem::path(FAGAN_DATA_DIR) / "garment_schema.json");
}

RawImage solid(int w, int h, std::uint8_t v) {
  RawImage r;
  r.width = w;
  r.height = h;
  r.channels = 3;
  r.pixels.assign(static_cast<std::size_t>(w * h * 3), v);
  return r;
}

}  // namespace

TEST(Schema, RejectsBadPartitions) {
  EXPECT_THROW(AttributeSchema({}, {}), SchemaError);
  EXPECT_THROW(AttributeSchema({"a", "a"}, {{"g", {0, 1}}}), SchemaError);
  EXPECT_THROW(AttributeSchema({"a", ""}, {{"g", {0, 1}}}), SchemaError);
  EXPECT_THROW(AttributeSchema({"a", "b"}, {{"g", {0}}}), SchemaError);
  EXPECT_THROW(AttributeSchema({"a", "b"}, {{"g", {0, 1}}, {"h", {1}}}), SchemaError);
  EXPECT_THROW(AttributeSchema({"a", "b"}, {{"g", {0, 2}}}), SchemaError);
  EXPECT_THROW(AttributeSchema({"a", "b"}, {{"g", {0, 1}}, {"h", {}}}), SchemaError);
}

TEST(Schema, GarmentSchemaHasFourSleevesAndEighteenColors) {
  const auto s = garment_schema();
  ASSERT_EQ(s.size(), 22u);
  ASSERT_EQ(s.groups().size(), 2u);
  EXPECT_EQ(s.groups()[0].members.size(), 4u);
  EXPECT_EQ(s.groups()[1].members.size(), 18u);
}

TEST(Schema, JsonRoundTrip) {
  const auto s = garment_schema();
  EXPECT_EQ(AttributeSchema::from_json(s.to_json()), s);
  // Members given as indices parse to the same schema.
  auto doc = s.to_json();
  for (auto& g : doc["groups"]) {
    nlohmann::json idx = nlohmann::json::array();
    for (const auto& name : g["members"]) idx.push_back(*s.index_of(name.get<std::string>()));
    g["members"] = idx;
  }
  EXPECT_EQ(AttributeSchema::from_json(doc), s);
}

TEST(Schema, Lookup) {
  const auto s = ft::two_by_two_schema();
  EXPECT_EQ(s.index_of("y0"), 2u);
  EXPECT_FALSE(s.index_of("z").has_value());
  ASSERT_NE(s.find_group("second"), nullptr);
  EXPECT_EQ(s.find_group("nope"), nullptr);
  EXPECT_EQ(s.group_of(1), 0u);
  EXPECT_EQ(s.group_of(3), 1u);
}

TEST(AttributeVectorValidation, OneHotPerGroup) {
  const auto s = ft::two_by_two_schema();
  EXPECT_FALSE(find_violation(s, AttributeVector({1, 0, 0, 1})).has_value());
  EXPECT_TRUE(find_violation(s, AttributeVector({1, 1, 0, 1})).has_value());
  EXPECT_TRUE(find_violation(s, AttributeVector({0, 0, 0, 1})).has_value());
  EXPECT_TRUE(find_violation(s, AttributeVector({1, 0, 1})).has_value());
  EXPECT_TRUE(find_violation(s, AttributeVector({2, 0, 0, 1})).has_value());
}

TEST(Manifest, FullSizeGarmentManifest) {
  const auto s = garment_schema();
  std::ostringstream csv;
  csv << "image";
  for (const auto& n : s.names()) csv << ',' << n;
  csv << '\n';
  std::mt19937_64 rng(3);
  for (int r = 0; r < 14221; ++r) {
    std::vector<int> row(22, 0);
    row[std::uniform_int_distribution<int>(0, 3)(rng)] = 1;
    row[4 + std::uniform_int_distribution<int>(0, 17)(rng)] = 1;
    csv << "img/" << r << ".jpg";
    for (int v : row) csv << ',' << v;
    csv << '\n';
  }
  std::istringstream in(csv.str());
  const auto examples = parse_manifest(in, s);
  ASSERT_EQ(examples.size(), 14221u);
  for (const auto& e : examples) {
    ASSERT_EQ(e.attributes.size(), 22u);
    ASSERT_FALSE(find_violation(s, e.attributes).has_value());
  }
  EXPECT_EQ(examples.front().image_ref, "img/0.jpg");
  EXPECT_EQ(examples.back().image_ref, "img/14220.jpg");
}

TEST(Manifest, GroupViolationNamesGroupAndRow) {
  const auto s = garment_schema();
  std::ostringstream csv;
  csv << "image";
  for (const auto& n : s.names()) csv << ',' << n;
  csv << "\na.png";
  for (int i = 0; i < 22; ++i) csv << ',' << (i == 0 || i == 4 || i == 5 ? 1 : 0);
  csv << '\n';
  std::istringstream in(csv.str());
  try {
    parse_manifest(in, s);
    FAIL() << "expected ManifestError";
  } catch (const ManifestError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("color"), std::string::npos) << msg;
    EXPECT_NE(msg.find("2"), std::string::npos) << msg;
  }
}

TEST(Manifest, RejectsMalformedRows) {
  const auto s = ft::two_by_two_schema();
  const std::string header = "image,x0,x1,y0,y1\n";
  auto parse = [&](const std::string& body) {
    std::istringstream in(body);
    return parse_manifest(in, s);
  };
  EXPECT_THROW(parse(header), ManifestError);                      // empty
  EXPECT_THROW(parse(""), ManifestError);                          // no header
  EXPECT_THROW(parse("image,x1,x0,y0,y1\na,1,0,1,0\n"), ManifestError);  // header order
  EXPECT_THROW(parse(header + "a,1,0,1\n"), ManifestError);       // field count
  EXPECT_THROW(parse(header + "a,1,0,1,0,0\n"), ManifestError);
  EXPECT_THROW(parse(header + "a,1,0,2,0\n"), ManifestError);     // non-binary
  EXPECT_THROW(parse(header + "a,1,0,x,0\n"), ManifestError);
  EXPECT_THROW(parse(header + ",1,0,1,0\n"), ManifestError);      // empty ref
  EXPECT_THROW(parse_manifest(std::filesystem::path("/nonexistent/m.csv"), s), ManifestError);
  EXPECT_EQ(parse(header + "a,1,0,1,0\r\n").size(), 1u);
  EXPECT_EQ(parse("\xEF\xBB\xBF" + header + "\"a,b.png\",0,1,0,1\n").front().image_ref, "a,b.png");
}

TEST(Manifest, SerializeParseRoundTrip) {
  const auto s = ft::two_by_two_schema();
  std::istringstream in(
      "image,x0,x1,y0,y1\n"
      "one.png,1,0,0,1\n"
      "\"two, with comma.png\",0,1,1,0\n"
      "three.jpg,0,1,0,1\n");
  const auto first = parse_manifest(in, s);
  ASSERT_EQ(first.size(), 3u);
  std::ostringstream out;
  write_manifest(out, s, first);
  std::istringstream again(out.str());
  EXPECT_EQ(parse_manifest(again, s), first);
}

TEST(Preprocess, AffineEndpoints) {
  const auto zeros = preprocess_image(solid(8, 8, 0), 8);
  EXPECT_EQ(zeros.min().item<float>(), -1.0f);
  EXPECT_EQ(zeros.max().item<float>(), -1.0f);
  const auto full = preprocess_image(solid(8, 8, 255), 8);
  EXPECT_EQ(full.min().item<float>(), 1.0f);
  const auto mid = preprocess_image(solid(8, 8, 128), 8);
  EXPECT_NEAR(mid[0][0][0].item<float>(), 128.0 / 127.5 - 1.0, 1e-7);
  EXPECT_NEAR(mid[0][0][0].item<float>(), 0.003922, 1e-6);
  EXPECT_EQ(mid.sizes(), (std::vector<std::int64_t>{3, 8, 8}));
}

TEST(Preprocess, ResizesAndRejectsBadInput) {
  const auto t = preprocess_image(solid(20, 12, 60), 16);
  EXPECT_EQ(t.sizes(), (std::vector<std::int64_t>{3, 16, 16}));
  RawImage gray = solid(4, 4, 0);
  gray.channels = 1;
  gray.pixels.resize(16);
  EXPECT_THROW(preprocess_image(gray, 4), ImageError);
  const std::vector<std::uint8_t> junk = {1, 2, 3, 4, 5};
  EXPECT_THROW(decode_image(junk), ImageError);
}

TEST(Preprocess, InverseMapRecoversPixelsAtNativeSize) {
  std::mt19937_64 rng(11);
  RawImage r = solid(16, 16, 0);
  for (auto& p : r.pixels) p = static_cast<std::uint8_t>(rng() & 0xFF);
  const auto back = to_raw_image(preprocess_image(r, 16));
  EXPECT_EQ(back.pixels, r.pixels);
}

TEST(Preprocess, PngRoundTripIsLossless) {
  std::mt19937_64 rng(12);
  RawImage r = solid(9, 7, 0);
  for (auto& p : r.pixels) p = static_cast<std::uint8_t>(rng() & 0xFF);
  const auto png = encode_png(r);
  const auto decoded = decode_image(png);
  EXPECT_EQ(decoded.width, 9);
  EXPECT_EQ(decoded.height, 7);
  EXPECT_EQ(decoded.pixels, r.pixels);
}

TEST(TargetSampling, SingletonPermutationIsIdentity) {
  const auto s = ft::two_by_two_schema();
  std::mt19937_64 rng(1);
  const std::vector<AttributeVector> a = {AttributeVector({0, 1, 1, 0})};
  EXPECT_EQ(sample_target_attributes(a, s, rng), a);
}

TEST(TargetSampling, PermutationPreservesMultiset) {
  const auto s = ft::two_by_two_schema();
  const std::vector<AttributeVector> a = {AttributeVector({1, 0, 1, 0}), AttributeVector({1, 0, 0, 1}),
                                          AttributeVector({0, 1, 1, 0}), AttributeVector({0, 1, 0, 1})};
  auto sorted_a = a;
  std::sort(sorted_a.begin(), sorted_a.end());
  std::map<std::vector<AttributeVector>, int> orders;
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    std::mt19937_64 rng(seed);
    auto b = sample_target_attributes(a, s, rng, TargetPolicy::kBatchPermutation);
    orders[b]++;
    std::sort(b.begin(), b.end());
    ASSERT_EQ(b, sorted_a) << "seed " << seed;
  }
  // 4! orderings all show up.
  EXPECT_EQ(orders.size(), 24u);
}

TEST(TargetSampling, UniformPerGroupIsValid) {
  const auto s = garment_schema();
  std::vector<AttributeVector> a;
  std::vector<std::uint8_t> v(22, 0);
  v[0] = 1;
  v[4] = 1;
  for (int i = 0; i < 16; ++i) a.emplace_back(v);
  std::mt19937_64 rng(5);
  std::vector<int> color_hits(18, 0);
  for (int rep = 0; rep < 100; ++rep) {
    for (const auto& b : sample_target_attributes(a, s, rng, TargetPolicy::kUniformPerGroup)) {
      ASSERT_FALSE(find_violation(s, b).has_value());
      for (int c = 0; c < 18; ++c) color_hits[c] += b[4 + c];
    }
  }
  for (int hits : color_hits) EXPECT_GT(hits, 0);
}

TEST(TargetSampling, RejectsInvalidInput) {
  const auto s = ft::two_by_two_schema();
  std::mt19937_64 rng(1);
  EXPECT_THROW(sample_target_attributes({}, s, rng), Error);
  const std::vector<AttributeVector> bad = {AttributeVector({1, 1, 1, 0})};
  EXPECT_THROW(sample_target_attributes(bad, s, rng), SchemaError);
  EXPECT_THROW(parse_target_policy("sideways"), ConfigError);
  EXPECT_EQ(parse_target_policy("uniform_per_group"), TargetPolicy::kUniformPerGroup);
}

TEST(Batches, CountsAndDeterminism) {
  EXPECT_EQ(make_batches(10, 4, 0, 0, true).size(), 2u);
  EXPECT_EQ(make_batches(10, 4, 0, 0, false).size(), 3u);
  EXPECT_EQ(make_batches(10, 10, 0, 0, true).size(), 1u);
  for (const auto& b : make_batches(10, 4, 9, 0, true)) EXPECT_EQ(b.size(), 4u);
  EXPECT_EQ(make_batches(100, 8, 42, 3, true), make_batches(100, 8, 42, 3, true));
  EXPECT_NE(make_batches(100, 8, 42, 3, true), make_batches(100, 8, 42, 4, true));
  EXPECT_NE(make_batches(100, 8, 42, 3, true), make_batches(100, 8, 43, 3, true));
  EXPECT_THROW(make_batches(10, 11, 0, 0, true), ConfigError);
  EXPECT_THROW(make_batches(10, 0, 0, 0, false), ConfigError);
}

TEST(Batches, EpochCoversEveryExampleOnce) {
  auto batches = make_batches(50, 7, 1, 0, false);
  std::vector<std::size_t> all;
  for (const auto& b : batches) all.insert(all.end(), b.begin(), b.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 50; ++i) ASSERT_EQ(all[i], i);
}

TEST(Batches, ScheduleIsRandomAccess) {
  BatchSchedule a(30, 4, 5), b(30, 4, 5);
  std::vector<std::vector<std::size_t>> forward;
  for (std::uint64_t s = 0; s < 20; ++s) forward.push_back(a.indices_for_step(s));
  for (std::uint64_t s = 20; s-- > 0;) EXPECT_EQ(b.indices_for_step(s), forward[s]);
  EXPECT_EQ(a.batches_per_epoch(), 7u);
}

TEST(Dataset, LoadsImagesRelativeToBase) {
  TempDir dir("ds");
  const auto s = ft::two_by_two_schema();
  std::filesystem::create_directories(dir / "img");
  save_png(solid(10, 10, 0), dir / "img/a.png");
  save_png(solid(10, 10, 255), dir / "img/b.png");
  const std::vector<DatasetExample> ex = {{"img/a.png", AttributeVector({1, 0, 1, 0})},
                                          {"img/b.png", AttributeVector({0, 1, 0, 1})}};
  const auto ds = load_dataset(ex, dir.path(), 8);
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.images.sizes(), (std::vector<std::int64_t>{2, 3, 8, 8}));
  EXPECT_EQ(ds.images[0].max().item<float>(), -1.0f);
  EXPECT_EQ(ds.images[1].min().item<float>(), 1.0f);
  const std::vector<std::size_t> idx = {1};
  const auto batch = ds.gather(idx);
  EXPECT_EQ(batch.attributes[0][1].item<float>(), 1.0f);
  EXPECT_EQ(batch.attribute_vectors.front(), ex[1].attributes);

  const std::vector<DatasetExample> missing = {{"img/none.png", AttributeVector({1, 0, 1, 0})}};
  EXPECT_THROW(load_dataset(missing, dir.path(), 8), ImageError);
}
