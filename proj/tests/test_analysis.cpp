#include "caproute/analysis.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "doctest.h"

using namespace caproute;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / "caproute_analysis_test";
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

REInstance labelled(const char* id, const char* rel) {
  REInstance inst;
  inst.id = id;
  inst.tokens = {"a", "verb", "b"};
  inst.subj_start = inst.subj_end = 0;
  inst.obj_start = inst.obj_end = 2;
  inst.subj_type = "t";
  inst.obj_type = "t";
  inst.relation = rel;
  return inst;
}

PredictionRecord rec(const char* id, const char* gold, const char* pred) {
  PredictionRecord r;
  r.id = id;
  r.gold = gold;
  r.predicted = pred;
  return r;
}

// Independent scalar metrics for oracle comparisons.
double cos_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double euc_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

struct Pixmap {
  int width = 0, height = 0;
  std::string pixels;
  unsigned char red_at(int x, int y) const {
    return static_cast<unsigned char>(pixels[static_cast<std::size_t>((y * width + x) * 3)]);
  }
  unsigned char green_at(int x, int y) const {
    return static_cast<unsigned char>(
        pixels[static_cast<std::size_t>((y * width + x) * 3 + 1)]);
  }
  unsigned char blue_at(int x, int y) const {
    return static_cast<unsigned char>(
        pixels[static_cast<std::size_t>((y * width + x) * 3 + 2)]);
  }
};

Pixmap read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::string magic;
  Pixmap img;
  int maxval = 0;
  in >> magic >> img.width >> img.height >> maxval;
  REQUIRE(magic == "P6");
  REQUIRE(maxval == 255);
  in.get();  // single whitespace after the header
  img.pixels.resize(static_cast<std::size_t>(img.width * img.height * 3));
  in.read(img.pixels.data(), static_cast<std::streamsize>(img.pixels.size()));
  REQUIRE(in.gcount() == static_cast<std::streamsize>(img.pixels.size()));
  return img;
}

}  // namespace

TEST_CASE("analogy pairs cover both polarities with cap semantics") {
  SUBCASE("one positive and two negative pairs") {
    Corpus corpus = make_corpus({labelled("i0", "r1"), labelled("i1", "r1"),
                                 labelled("i2", "r2"), labelled("i3", "no_relation")},
                                "test");
    auto pairs = build_analogy_pairs(corpus, 100, 1);
    std::int64_t pos = 0, neg = 0;
    for (const auto& p : pairs) {
      CHECK(p.id_i != p.id_j);
      CHECK(p.id_i != "i3");  // negatives never involve no_relation instances
      CHECK(p.id_j != "i3");
      (p.polarity == Polarity::positive ? pos : neg) += 1;
    }
    CHECK(pos == 1);
    CHECK(neg == 2);

    auto again = build_analogy_pairs(corpus, 100, 1);
    REQUIRE(again.size() == pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      CHECK(again[i].id_i == pairs[i].id_i);
      CHECK(again[i].id_j == pairs[i].id_j);
    }
  }
  SUBCASE("a cap above the population returns every pair") {
    std::vector<REInstance> instances;
    for (int i = 0; i < 5; ++i) {
      instances.push_back(labelled(("a" + std::to_string(i)).c_str(), "rA"));
    }
    instances.push_back(labelled("b0", "rB"));
    Corpus corpus = make_corpus(std::move(instances), "test");
    auto pairs = build_analogy_pairs(corpus, 100, 2);
    std::int64_t pos = 0, neg = 0;
    for (const auto& p : pairs) (p.polarity == Polarity::positive ? pos : neg) += 1;
    CHECK(pos == 10);  // C(5,2)
    CHECK(neg == 5);

    auto capped = build_analogy_pairs(corpus, 3, 2);
    pos = neg = 0;
    for (const auto& p : capped) (p.polarity == Polarity::positive ? pos : neg) += 1;
    CHECK(pos == 3);
    CHECK(neg == 3);
  }
  SUBCASE("degenerate corpora are rejected") {
    Corpus single = make_corpus({labelled("i0", "r1"), labelled("i1", "no_relation")},
                                "test");
    CHECK_THROWS_AS(build_analogy_pairs(single, 10, 1), std::invalid_argument);
    Corpus one_rel = make_corpus({labelled("i0", "r1"), labelled("i1", "r1")}, "test");
    CHECK_THROWS_WITH_AS(build_analogy_pairs(one_rel, 10, 1),
                         doctest::Contains("negative"), std::invalid_argument);
    CHECK_THROWS_AS(build_analogy_pairs(one_rel, 0, 1), std::invalid_argument);
  }
}

TEST_CASE("entity slices mean-pool per layer") {
  HiddenStates hs;
  hs.layers.push_back(Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6}));
  hs.layers.push_back(Tensor::from_data({3, 2}, {10, 20, 30, 40, 50, 60}));

  SUBCASE("length-1 span returns that token's vectors") {
    auto sliced = slice_entity_embedding(hs, {1});
    REQUIRE(sliced.size() == 2);
    CHECK(sliced[0] == std::vector<double>{3, 4});
    CHECK(sliced[1] == std::vector<double>{30, 40});
  }
  SUBCASE("two distinct vectors average arithmetically") {
    auto sliced = slice_entity_embedding(hs, {0, 2});
    CHECK(sliced[0] == std::vector<double>{3, 4});  // (1+5)/2, (2+6)/2
    CHECK(sliced[1] == std::vector<double>{30, 40});
  }
  SUBCASE("identical repeated vectors keep their value") {
    HiddenStates same;
    same.layers.push_back(Tensor::from_data({2, 2}, {7, -1, 7, -1}));
    auto sliced = slice_entity_embedding(same, {0, 1});
    CHECK(sliced[0] == std::vector<double>{7, -1});
  }
  SUBCASE("bad spans are rejected") {
    CHECK_THROWS_AS(slice_entity_embedding(hs, {}), std::invalid_argument);
    CHECK_THROWS_AS(slice_entity_embedding(hs, {3}), std::out_of_range);
  }
}

TEST_CASE("pair metrics match scalar fixtures") {
  CHECK(cosine_similarity({1, 0}, {0, 1}) == 0.0);
  CHECK(euclidean_distance({1, 0}, {0, 1}) ==
        doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
  CHECK(cosine_similarity({2, -3}, {2, -3}) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(euclidean_distance({2, -3}, {2, -3}) == 0.0);
  CHECK(cosine_similarity({1, 2}, {3, 4}) ==
        doctest::Approx(0.9838699100999074).epsilon(1e-15));
  CHECK(euclidean_distance({1, 2}, {3, 4}) ==
        doctest::Approx(2.8284271247461903).epsilon(1e-15));
  // Symmetry in argument order.
  CHECK(cosine_similarity({1, 2}, {3, 4}) == cosine_similarity({3, 4}, {1, 2}));
  CHECK(euclidean_distance({1, 2}, {3, 4}) == euclidean_distance({3, 4}, {1, 2}));
  CHECK(cosine_similarity({0, 0}, {1, 2}) == 0.0);  // degenerate zero vector
  CHECK_THROWS_AS(cosine_similarity({1}, {1, 2}), std::invalid_argument);
}

TEST_CASE("category matrices average the pair metrics per layer and polarity") {
  std::map<std::string, EntityEmbeddings> embeddings;
  embeddings["a"] = {{{1, 0}, {2, 2}}, {{0, 2}, {1, 1}}};
  embeddings["b"] = {{{0, 1}, {2, 2}}, {{0, 4}, {2, 2}}};
  embeddings["c"] = {{{1, 1}, {-1, 2}}, {{3, 0}, {0, 5}}};
  embeddings["d"] = {{{2, 0}, {1, -1}}, {{0, 1}, {4, 4}}};
  EmbeddingProvider provider = [&](const std::string& id) { return embeddings.at(id); };

  std::vector<AnalogyPair> pairs{{"a", "b", Polarity::positive},
                                 {"c", "d", Polarity::positive},
                                 {"a", "c", Polarity::negative}};

  for (PairMetric metric : {PairMetric::cosine, PairMetric::euclidean}) {
    CAPTURE(metric == PairMetric::cosine);
    CategoryMatrix matrix = category_matrix(pairs, provider, metric, "before");
    REQUIRE(matrix.layers() == 2);

    // Full scalar re-computation of the averaging.
    auto score = metric == PairMetric::cosine ? cos_oracle : euc_oracle;
    for (std::size_t l = 0; l < 2; ++l) {
      const double heads_pos = (score(embeddings["a"].head[l], embeddings["b"].head[l]) +
                                score(embeddings["c"].head[l], embeddings["d"].head[l])) /
                               2.0;
      const double tails_pos = (score(embeddings["a"].tail[l], embeddings["b"].tail[l]) +
                                score(embeddings["c"].tail[l], embeddings["d"].tail[l])) /
                               2.0;
      const double heads_neg = score(embeddings["a"].head[l], embeddings["c"].head[l]);
      const double tails_neg = score(embeddings["a"].tail[l], embeddings["c"].tail[l]);
      CHECK(matrix.values[l][0] == doctest::Approx(heads_pos).epsilon(1e-12));
      CHECK(matrix.values[l][1] == doctest::Approx(heads_neg).epsilon(1e-12));
      CHECK(matrix.values[l][2] == doctest::Approx(tails_pos).epsilon(1e-12));
      CHECK(matrix.values[l][3] == doctest::Approx(tails_neg).epsilon(1e-12));
      if (metric == PairMetric::cosine) {
        for (double v : matrix.values[l]) {
          CHECK(v >= -1.0);
          CHECK(v <= 1.0);
        }
      } else {
        for (double v : matrix.values[l]) CHECK(v >= 0.0);
      }
    }

    // Pair order never matters.
    std::vector<AnalogyPair> reversed(pairs.rbegin(), pairs.rend());
    CategoryMatrix again = category_matrix(reversed, provider, metric, "before");
    for (std::size_t l = 0; l < 2; ++l) {
      for (std::size_t c = 0; c < 4; ++c) {
        CHECK(again.values[l][c] == doctest::Approx(matrix.values[l][c]).epsilon(1e-15));
      }
    }
  }

  CHECK_THROWS_AS(category_matrix({}, provider, PairMetric::cosine, "x"),
                  std::invalid_argument);
}

TEST_CASE("heatmaps render a csv and a pixmap") {
  TempDir tmp;
  SUBCASE("constant matrix gives one uniform color") {
    CategoryMatrix matrix;
    matrix.values.assign(2, {0.25, 0.25, 0.25, 0.25});
    const std::string base = tmp.file("flat");
    render_heatmap(matrix, base);

    Pixmap img = read_ppm(base + ".ppm");
    CHECK(img.width == 2 * 24);
    CHECK(img.height == 4 * 24);
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        CHECK(img.red_at(x, y) == 135);  // midpoint of the blue->red ramp
        CHECK(img.green_at(x, y) == 60);
        CHECK(img.blue_at(x, y) == 135);
      }
    }

    CategoryMatrix parsed = parse_category_matrix_csv(base + ".csv");
    REQUIRE(parsed.layers() == 2);
    for (std::size_t l = 0; l < 2; ++l) {
      for (std::size_t c = 0; c < 4; ++c) CHECK(parsed.values[l][c] == 0.25);
    }
  }
  SUBCASE("csv re-parse reproduces the exact values") {
    CategoryMatrix matrix;
    matrix.values.push_back({0.123456789012345678, -1.0 / 3.0, 2.0 / 7.0, 0.5});
    matrix.values.push_back({42.0, -0.25, 1e-17, 3.0});
    const std::string base = tmp.file("roundtrip");
    render_heatmap(matrix, base);
    CategoryMatrix parsed = parse_category_matrix_csv(base + ".csv");
    REQUIRE(parsed.layers() == matrix.layers());
    for (std::size_t l = 0; l < matrix.values.size(); ++l) {
      for (std::size_t c = 0; c < 4; ++c) {
        CHECK(parsed.values[l][c] == matrix.values[l][c]);  // %.17g is lossless
      }
    }
  }
  SUBCASE("monotone values map to monotone pixel intensities") {
    CategoryMatrix matrix;
    for (int l = 0; l < 4; ++l) {
      matrix.values.push_back({static_cast<double>(l), 0.5, 0.5, 0.5});
    }
    const std::string base = tmp.file("ramp");
    render_heatmap(matrix, base);
    Pixmap img = read_ppm(base + ".ppm");
    // Category row 0 holds heads_pos; sample each layer block's center.
    for (int l = 0; l + 1 < 4; ++l) {
      CHECK(img.red_at(l * 24 + 12, 12) < img.red_at((l + 1) * 24 + 12, 12));
      CHECK(img.blue_at(l * 24 + 12, 12) > img.blue_at((l + 1) * 24 + 12, 12));
    }
  }
  SUBCASE("non-finite cells are rejected") {
    CategoryMatrix matrix;
    matrix.values.push_back({0.0, std::nan(""), 0.0, 0.0});
    CHECK_THROWS_AS(render_heatmap(matrix, tmp.file("bad")), std::invalid_argument);
  }
}

TEST_CASE("disagreement mining buckets and sorts confusions") {
  SUBCASE("counting fixture") {
    std::vector<PredictionRecord> records{rec("x0", "P0", "P17"), rec("x1", "P0", "P17"),
                                          rec("x2", "P17", "P0"), rec("x3", "P0", "P0")};
    auto cats = mine_disagreements(records);
    REQUIRE(cats.size() == 2);
    CHECK(cats[0].gold == "P0");
    CHECK(cats[0].predicted == "P17");
    CHECK(cats[0].count == 2);
    CHECK(cats[0].member_ids == std::vector<std::string>{"x0", "x1"});
    CHECK(cats[1].gold == "P17");
    CHECK(cats[1].count == 1);
    std::int64_t total = 0;
    for (const auto& c : cats) total += c.count;
    CHECK(total == 3);  // exactly the mispredicted records
  }
  SUBCASE("ties break lexicographically") {
    std::vector<PredictionRecord> records{rec("x0", "B", "A"), rec("x1", "A", "B")};
    auto cats = mine_disagreements(records);
    REQUIRE(cats.size() == 2);
    CHECK(cats[0].gold == "A");
    CHECK(cats[1].gold == "B");
  }
  SUBCASE("perfect predictions yield an empty report") {
    std::vector<PredictionRecord> records{rec("x0", "A", "A"), rec("x1", "B", "B")};
    CHECK(mine_disagreements(records).empty());
    CHECK_THROWS_AS(mine_disagreements({}), std::invalid_argument);
  }
  SUBCASE("csv export") {
    TempDir tmp;
    std::vector<PredictionRecord> records{rec("x0", "P0", "P17"), rec("x1", "P17", "P0"),
                                          rec("x2", "P0", "P17")};
    auto cats = mine_disagreements(records);
    const std::string path = tmp.file("disagreements.csv");
    save_disagreements_csv(cats, path);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "gold,pred,count");
    std::getline(in, line);
    CHECK(line == "P0,P17,2");
    std::getline(in, line);
    CHECK(line == "P17,P0,1");
  }
}

TEST_CASE("category sampling is capped, deterministic, and member-bound") {
  DisagreementCategory cat;
  cat.gold = "A";
  cat.predicted = "B";
  cat.member_ids = {"m0", "m1", "m2"};
  cat.count = 3;

  auto all = sample_category(cat, 10, 4);
  CHECK(std::set<std::string>(all.begin(), all.end()) ==
        std::set<std::string>{"m0", "m1", "m2"});

  auto two = sample_category(cat, 2, 4);
  REQUIRE(two.size() == 2);
  for (const auto& id : two) {
    CHECK(std::count(cat.member_ids.begin(), cat.member_ids.end(), id) == 1);
  }
  CHECK(sample_category(cat, 2, 4) == two);

  DisagreementCategory empty;
  CHECK_THROWS_AS(sample_category(empty, 2, 1), std::invalid_argument);
  CHECK_THROWS_AS(sample_category(cat, 0, 1), std::invalid_argument);
}

TEST_CASE("noise recovery reports precision and recall of the flips") {
  auto categories = mine_disagreements({rec("d1", "A", "B"), rec("d2", "A", "B"),
                                        rec("d3", "B", "A"), rec("d4", "C", "A"),
                                        rec("ok", "C", "C")});
  SUBCASE("partial overlap") {
    std::vector<LabelFlip> flips{{"d1", "x", "A"}, {"d2", "x", "A"}, {"miss", "x", "y"}};
    auto report = noise_recovery_report(categories, flips);
    CHECK(report.disagreed == 4);
    CHECK(report.flipped == 3);
    CHECK(report.overlap == 2);
    REQUIRE(report.precision.has_value());
    REQUIRE(report.recall.has_value());
    CHECK(*report.precision == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(*report.recall == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  }
  SUBCASE("all disagreements are flips") {
    std::vector<LabelFlip> flips{
        {"d1", "x", "A"}, {"d2", "x", "A"}, {"d3", "x", "B"}, {"d4", "x", "C"}};
    auto report = noise_recovery_report(categories, flips);
    CHECK(*report.precision == 1.0);
    CHECK(*report.recall == 1.0);
  }
  SUBCASE("zero flips on a perfect model flags both ratios") {
    auto report = noise_recovery_report({}, {});
    CHECK_FALSE(report.precision.has_value());
    CHECK_FALSE(report.recall.has_value());
    CHECK(report.overlap == 0);
  }
}

TEST_CASE("sample export renders sampled sentences") {
  TempDir tmp;
  Corpus corpus = make_corpus({labelled("x0", "A"), labelled("x1", "B")}, "test");
  auto cats = mine_disagreements({rec("x0", "A", "B"), rec("x1", "B", "A")});
  const std::string path = tmp.file("samples.jsonl");
  save_category_samples_jsonl(cats, corpus, SentenceConfigKind::Mask, 10, 1, path);

  for (const auto& cat : cats) CHECK_FALSE(cat.sample_ids.empty());
  std::ifstream in(path);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++lines;
    CHECK(line.find("\"text\":\"MASK verb MASK\"") != std::string::npos);
  }
  CHECK(lines == 2);

  auto bad = cats;
  bad[0].member_ids = {"ghost"};
  CHECK_THROWS_AS(
      save_category_samples_jsonl(bad, corpus, SentenceConfigKind::Mask, 10, 1,
                                  tmp.file("bad.jsonl")),
      std::invalid_argument);
}

TEST_CASE("model embeddings feed the category pipeline end to end") {
  std::vector<REInstance> instances;
  auto add = [&](const char* id, const char* subj, const char* verb, const char* obj,
                 const char* rel) {
    REInstance inst;
    inst.id = id;
    inst.tokens = {subj, verb, obj, "."};
    inst.subj_start = inst.subj_end = 0;
    inst.obj_start = inst.obj_end = 2;
    inst.subj_type = "person";
    inst.obj_type = "person";
    inst.relation = rel;
    instances.push_back(inst);
  };
  add("a0", "amy", "likes", "bob", "likes");
  add("a1", "cal", "likes", "dee", "likes");
  add("b0", "amy", "hates", "dee", "hates");
  add("b1", "cal", "hates", "bob", "hates");
  Corpus corpus = make_corpus(std::move(instances), "train");

  Vocabulary vocab = build_vocabulary(corpus, SentenceConfigKind::Mix);
  ModelConfig cfg;
  cfg.encoder = EncoderConfig{1, 8, 2, 16, 64};
  cfg.head = HeadConfig{2, 8, 8, 2};
  cfg.heads = HeadSet::parse("h3");
  cfg.seed = 5;
  Model model(vocab, corpus.relations, cfg);

  std::map<std::string, const REInstance*> by_id;
  for (const auto& inst : corpus.instances) by_id[inst.id] = &inst;
  EmbeddingProvider provider = [&](const std::string& id) {
    return model.entity_embeddings(*by_id.at(id));
  };

  auto pairs = build_analogy_pairs(corpus, 50, 3);
  CategoryMatrix cos = category_matrix(pairs, provider, PairMetric::cosine, "before");
  CategoryMatrix euc = category_matrix(pairs, provider, PairMetric::euclidean, "before");
  CHECK(cos.layers() == 2);  // embedding stack + one block
  CHECK(euc.layers() == 2);
  for (const auto& row : cos.values) {
    for (double v : row) {
      CHECK(v >= -1.0);
      CHECK(v <= 1.0);
    }
  }
  for (const auto& row : euc.values) {
    for (double v : row) CHECK(v >= 0.0);
  }
}
