#include <gtest/gtest.h>

#include "fagan/editor.hpp"
#include "fagan/error.hpp"
#include "fagan/toy_data.hpp"
#include "support.hpp"

using namespace fagan;
namespace ft = fagan::test_support;
using ft::TempDir;

namespace {

Model random_model(const AttributeSchema& schema, std::int64_t image_size = 32,
                   std::uint64_t seed = 1) {
  NetworkConfig n;
  n.image_size = image_size;
  n.num_downsamples = 3;
  n.num_attributes = static_cast<std::int64_t>(schema.size());
  return Model{n, schema, init_params(n, seed), "test"};
}

AttributeSchema garment_schema() {
  return AttributeSchema::load(std::filesystem::path(FAGAN_DATA_DIR) / "garment_schema.json");
}

AttributeVector first_values(const AttributeSchema& s) {
  std::vector<std::uint8_t> v(s.size(), 0);
  for (const auto& g : s.groups()) v[g.members.front()] = 1;
  return AttributeVector(v);
}

torch::Tensor sample_image(std::int64_t size, std::uint64_t seed = 0) {
  torch::manual_seed(seed);
  return torch::rand({3, size, size}) * 2 - 1;
}

std::size_t hamming(const AttributeVector& a, const AttributeVector& b) {
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
  return d;
}

}  // namespace

TEST(ResolveTarget, MovesOneHotPerEditedGroup) {
  const auto s = garment_schema();
  const auto a = first_values(s);
  const AttributeEdit sleeve{"sleeve", "long-sleeve"}, color{"color", "navy"};
  const auto one = resolve_target(s, a, std::vector{sleeve});
  EXPECT_EQ(hamming(a, one), 2u);
  EXPECT_EQ(one[*s.index_of("long-sleeve")], 1);
  // The resolved value is one of the four sleeve columns.
  EXPECT_LT(*s.index_of("long-sleeve"), 4u);
  const auto two = resolve_target(s, a, std::vector{sleeve, color});
  EXPECT_EQ(hamming(a, two), 4u);
  EXPECT_FALSE(find_violation(s, two).has_value());
  EXPECT_EQ(resolve_target(s, a, {}), a);
}

TEST(ResolveTarget, Errors) {
  const auto s = garment_schema();
  const auto a = first_values(s);
  try {
    resolve_target(s, a, std::vector<AttributeEdit>{{"fabric", "silk"}});
    FAIL();
  } catch (const EditError& e) {
    EXPECT_NE(std::string(e.what()).find("fabric"), std::string::npos);
  }
  EXPECT_THROW(resolve_target(s, a, std::vector<AttributeEdit>{{"color", "plaid"}}), EditError);
  EXPECT_THROW(resolve_target(s, a, std::vector<AttributeEdit>{{"color", "no-sleeve"}}), EditError);
  EXPECT_THROW(resolve_target(s, a, std::vector<AttributeEdit>{{"color", "red"}, {"color", "blue"}}),
               EditError);
  EXPECT_THROW(parse_attribute_edit("color"), EditError);
  EXPECT_THROW(parse_attribute_edit("=red"), EditError);
  const auto e = parse_attribute_edit("color=red");
  EXPECT_EQ(e.group, "color");
  EXPECT_EQ(e.value, "red");
}

TEST(AttributesFromLogits, RepairsGroups) {
  const auto s = ft::two_by_two_schema();
  // First group: both above threshold; second: neither.
  const auto v = attributes_from_logits(s, torch::tensor({1.0, 2.0, -3.0, -1.0}));
  EXPECT_EQ(v, AttributeVector({0, 1, 0, 1}));
  EXPECT_EQ(attributes_from_logits(s, torch::tensor({3.0, -3.0, -3.0, 3.0})),
            AttributeVector({1, 0, 0, 1}));
}

TEST(Editor, ReconstructAndEmptyEdit) {
  const auto model = random_model(ft::two_by_two_schema());
  const Editor editor(model);
  const auto x = sample_image(32);
  const auto x_copy = x.clone();
  const auto a = AttributeVector({0, 1, 1, 0});
  const auto r1 = editor.reconstruct(x, a);
  EXPECT_TRUE(torch::equal(r1, editor.reconstruct(x, a)));
  EXPECT_EQ(r1.sizes(), x.sizes());
  EXPECT_LT(r1.abs().max().item<float>(), 1.0f);
  const auto edited = editor.edit_image({x, a, {}});
  EXPECT_TRUE(torch::equal(edited.image, r1));
  EXPECT_EQ(edited.target, a);
  EXPECT_TRUE(torch::equal(x, x_copy));
  EXPECT_THROW(editor.reconstruct(x, AttributeVector({1, 1, 1, 0})), EditError);
}

TEST(Editor, PredictedSourceIsOneHot) {
  const auto s = garment_schema();
  const Editor editor(random_model(s));
  const auto result = editor.edit_image({sample_image(32), std::nullopt, {{"color", "teal"}}});
  EXPECT_FALSE(find_violation(s, result.source).has_value());
  EXPECT_FALSE(find_violation(s, result.target).has_value());
  EXPECT_EQ(result.target[*s.index_of("teal")], 1);
}

TEST(Sweep, ColumnContract) {
  for (const auto& schema : {garment_schema(), toy::schema()}) {
    const Editor editor(random_model(schema));
    const auto x = sample_image(32, 3);
    const auto a = first_values(schema);
    const auto grid = editor.attribute_sweep(x, a);
    ASSERT_EQ(grid.images.size(), 2 + schema.size());
    ASSERT_EQ(grid.labels.size(), grid.images.size());
    EXPECT_EQ(grid.labels[0], "original");
    EXPECT_EQ(grid.labels[1], "reconstruction");
    for (std::size_t i = 0; i < schema.size(); ++i) EXPECT_EQ(grid.labels[2 + i], schema.names()[i]);
    EXPECT_TRUE(torch::equal(grid.images[0], x));
    EXPECT_TRUE(torch::equal(grid.images[1], editor.reconstruct(x, a)));
    // Column for a value outside a's groups equals the single forced edit.
    const auto last = schema.size() - 1;
    const auto& group = schema.groups()[schema.group_of(last)];
    const auto single = editor.edit_image({x, a, {{group.name, schema.names()[last]}}});
    EXPECT_TRUE(torch::equal(grid.images[2 + last], single.image));
    const auto strip = render_strip(grid);
    EXPECT_GE(strip.width, static_cast<int>(32 * grid.images.size()));
    EXPECT_GT(strip.height, 32);
  }
  EXPECT_EQ(garment_schema().size() + 2, 24u);
}

TEST(Sweep, OrderFollowsSchemaFile) {
  // Same values, groups listed in the other order: columns follow attribute order.
  const AttributeSchema a({"s", "l", "r", "g"}, {{"sleeve", {0, 1}}, {"color", {2, 3}}});
  const AttributeSchema b({"s", "l", "r", "g"}, {{"color", {2, 3}}, {"sleeve", {0, 1}}});
  const auto ga = Editor(random_model(a)).attribute_sweep(sample_image(32), AttributeVector({1, 0, 1, 0}));
  const auto gb = Editor(random_model(b)).attribute_sweep(sample_image(32), AttributeVector({1, 0, 1, 0}));
  EXPECT_EQ(ga.labels, gb.labels);
}

TEST(MatchRate, SelfConsistentAndUniform) {
  const auto s = ft::two_by_two_schema();
  std::vector<EditSample> samples;
  std::vector<torch::Tensor> logits;
  for (int i = 0; i < 6; ++i) {
    const auto b = i % 2 ? AttributeVector({0, 1, 0, 1}) : AttributeVector({0, 1, 1, 0});
    // The image carries b's own logits.
    auto img = torch::zeros({3, 2, 2});
    for (int k = 0; k < 4; ++k) img[0][k / 2][k % 2] = b[static_cast<std::size_t>(k)] ? 5.0 : -5.0;
    samples.push_back({img, b, {0, 1}});
  }
  const AttributeEvaluator echo = [](const torch::Tensor& imgs) {
    return imgs.select(1, 0).reshape({imgs.size(0), 4});
  };
  EXPECT_EQ(attribute_match_rate(echo, s, samples), 1.0);
  const AttributeEvaluator uniform = [](const torch::Tensor& imgs) {
    return torch::zeros({imgs.size(0), 4});
  };
  // Targets in group 0 are never its first index.
  std::vector<EditSample> first_group;
  for (auto e : samples) {
    e.edited_groups = {0};
    first_group.push_back(e);
  }
  EXPECT_EQ(attribute_match_rate(uniform, s, first_group), 0.0);
  EXPECT_THROW(attribute_match_rate(echo, s, std::vector<EditSample>{}), EditError);
}

TEST(Model, LoadsTrainerCheckpoint) {
  TempDir dir("model");
  const auto schema = ft::micro_schema();
  const auto network = ft::micro_network();
  Trainer trainer(network, ft::micro_train(), schema);
  const auto data = ft::random_dataset(schema, 8, 8, 1);
  trainer.train_step(ft::first_batch(data, 4));
  save_checkpoint(trainer.checkpoint(), dir / "m.fagn");
  const auto model = load_model(dir / "m.fagn");
  EXPECT_EQ(model.network, network);
  EXPECT_EQ(model.schema, schema);
  EXPECT_EQ(model.fingerprint, trainer.fingerprint());
  EXPECT_TRUE(bitwise_equal(model.store, trainer.store()));

  auto ck = trainer.checkpoint();
  ck.metadata["config"]["lambda1"] = 3.0;
  save_checkpoint(ck, dir / "tampered.fagn");
  EXPECT_THROW(load_model(dir / "tampered.fagn"), FingerprintMismatch);
}

TEST(Evaluator, TrainsAndRoundTrips) {
  TempDir dir("evaluator");
  const auto schema = toy::schema();
  const auto data = toy::to_dataset(toy::generate(64, 4, 16), 16);
  NetworkConfig n;
  n.image_size = 16;
  n.num_downsamples = 2;
  n.num_attributes = 5;
  EvaluatorTrainConfig cfg;
  cfg.steps = 150;
  cfg.batch_size = 16;
  const auto ev = train_evaluator(data, schema, n, cfg);
  EXPECT_TRUE(ev.store.encoder().empty());
  EXPECT_TRUE(ev.store.generator().empty());
  save_evaluator(ev, dir / "e.fagn");
  const auto back = load_evaluator(dir / "e.fagn");
  EXPECT_TRUE(bitwise_equal(back.store, ev.store));
  EXPECT_EQ(back.schema, schema);
  EXPECT_THROW(load_model(dir / "e.fagn"), CheckpointError);

  // Scoring ground-truth images against their own labels: a learned
  // evaluator should mostly agree on this easy data.
  std::vector<EditSample> samples;
  for (std::size_t i = 0; i < data.size(); ++i)
    samples.push_back({data.images[static_cast<std::int64_t>(i)], data.attributes[i], {0, 1}});
  EXPECT_GT(attribute_match_rate(ev.as_function(), schema, samples), 0.9);
}

TEST(ToyData, GeneratesValidCorpus) {
  TempDir dir("toy");
  const auto samples = toy::generate(12, 2);
  ASSERT_EQ(samples.size(), 12u);
  for (const auto& s : samples) {
    EXPECT_EQ(s.image.width, 64);
    EXPECT_FALSE(find_violation(toy::schema(), s.attributes).has_value());
  }
  toy::write(samples, dir.path());
  const auto schema = AttributeSchema::load(dir / "schema.json");
  EXPECT_EQ(schema, toy::schema());
  const auto examples = parse_manifest(dir / "manifest.csv", schema);
  ASSERT_EQ(examples.size(), 12u);
  const auto ds = load_dataset(examples, dir.path(), 64);
  const auto direct = toy::to_dataset(samples, 64);
  EXPECT_TRUE(torch::equal(ds.images, direct.images));
  // Same seed, same pixels.
  EXPECT_EQ(toy::generate(3, 2)[2].image.pixels, samples[2].image.pixels);
}
