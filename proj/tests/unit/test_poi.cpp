#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "aether/csv.hpp"
#include "aether/error.hpp"
#include "aether/poi.hpp"
#include "aether/rng.hpp"
#include "doctest.h"
#include "json.hpp"
#include "oracles.hpp"

using namespace aether;

namespace {

double cosine(const std::vector<float>& a, const std::vector<float>& b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += double(a[i]) * b[i];
    na += double(a[i]) * a[i];
    nb += double(b[i]) * b[i];
  }
  return d / std::sqrt(na * nb);
}

void write_text(const std::string& path, const std::string& s) {
  std::ofstream(path, std::ios::binary) << s;
}

}  // namespace

TEST_CASE("render_description follows the template") {
  CHECK(render_description({1, 0, 0, "Starbucks", "food and drink", "coffee shop"}) ==
        "A place of coffee shop, a type of food and drink, named Starbucks.");
  CHECK(render_description({1, 0, 0, "X", "A", "B"}) == "A place of B, a type of A, named X.");
  CHECK(render_description({1, 0, 0, "Smith, Jones", "A", "B"}) == "A place of B, a type of A, named Smith, Jones.");
  CHECK(render_description({1, 0, 0, "  Padded  ", " A", "B "}) == "A place of B, a type of A, named Padded.");
}

TEST_CASE("render_description is injective over a small taxonomy") {
  std::set<std::string> seen;
  std::size_t n = 0;
  for (const char* l1 : {"retail", "food", "leisure"}) {
    for (const char* l2 : {"shop", "cafe", "park"}) {
      for (const char* name : {"North", "South", "East West"}) {
        seen.insert(render_description({0, 0, 0, name, l1, l2}));
        ++n;
      }
    }
  }
  CHECK(seen.size() == n);
}

TEST_CASE("quoted-comma fixture parses like Python's csv module") {
  const std::string dir = AETHER_FIXTURE_DIR;
  const auto expected = nlohmann::json::parse(oracle::slurp(dir + "/expected.json"))["pois_quoted"];
  const auto records = csv::read_file(dir + "/pois_quoted.csv");
  REQUIRE(records.size() == 1 + expected["rows"].size());
  CHECK(records[0].fields == expected["header"].get<std::vector<std::string>>());
  for (std::size_t i = 0; i < expected["rows"].size(); ++i) {
    CHECK(records[i + 1].fields == expected["rows"][i].get<std::vector<std::string>>());
  }
  const auto pois = load_pois(dir + "/pois_quoted.csv");
  REQUIRE(pois.size() == 3);
  CHECK(pois[0].name == "Smith, Jones & Co");
  CHECK(pois[0].x == 500010.5);
  CHECK(pois[1].name == "The \"Crown\" Inn");
  CHECK(pois[2].name == "Plain Name");  // trimmed
  CHECK(pois[2].category_l2 == "bank, building society");
}

TEST_CASE("csv parser edge cases") {
  const auto r = csv::parse("a,\"b\nc\",\"\"\"\"\n\n1,,3\r\n");
  REQUIRE(r.size() == 2);
  CHECK(r[0].fields == std::vector<std::string>{"a", "b\nc", "\""});
  CHECK(r[1].fields == std::vector<std::string>{"1", "", "3"});
  CHECK(r[1].line == 4);
  CHECK_THROWS_AS(csv::parse("a,\"unterminated\n"), FormatError);
  CHECK_THROWS_AS(csv::parse("a,b\"c\n"), FormatError);
  CHECK(csv::escape("plain") == "plain");
  CHECK(csv::escape("a,b") == "\"a,b\"");
  CHECK(csv::escape("say \"hi\"") == "\"say \"\"hi\"\"\"");
}

TEST_CASE("load_pois: well-formed file and rejections") {
  const std::string d = oracle::temp_dir("poi_load");
  write_text(d + "/ok.csv", "id,x,y,name,cat1,cat2\n3,1,2,A,l1,l2\n1,3,4,B,l1,l2\n2,5,6,C,l1,l2\n");
  const auto ok = load_pois(d + "/ok.csv");
  REQUIRE(ok.size() == 3);
  CHECK(ok[0].id == 3);
  CHECK(ok[1].id == 1);
  CHECK(ok[2].id == 2);
  // column order comes from the header
  write_text(d + "/reordered.csv", "name,cat2,cat1,y,x,id\nA,l2,l1,2,1,3\n");
  CHECK(load_pois(d + "/reordered.csv")[0] == PoiRecord{3, 1, 2, "A", "l1", "l2"});

  write_text(d + "/dup.csv", "id,x,y,name,cat1,cat2\n1,1,2,A,a,b\n2,1,2,B,a,b\n1,1,2,C,a,b\n");
  try {
    load_pois(d + "/dup.csv");
    FAIL("duplicate accepted");
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("duplicate id 1") != std::string::npos);
    CHECK(msg.find("rows 2 and 4") != std::string::npos);
  }
  write_text(d + "/missing.csv", "id,x,name,cat1,cat2\n1,1,A,a,b\n");
  CHECK_THROWS_WITH_AS(load_pois(d + "/missing.csv"), doctest::Contains("y"), FormatError);
  write_text(d + "/badnum.csv", "id,x,y,name,cat1,cat2\n1,1,north,A,a,b\n");
  CHECK_THROWS_WITH_AS(load_pois(d + "/badnum.csv"), doctest::Contains("north"), FormatError);
  write_text(d + "/emptyname.csv", "id,x,y,name,cat1,cat2\n1,1,2,   ,a,b\n");
  CHECK_THROWS_AS(load_pois(d + "/emptyname.csv"), FormatError);
}

TEST_CASE("POIs round-trip field for field") {
  std::vector<PoiRecord> pois{{7, 530000.125, 181000.5, "Smith, Jones", "retail", "hardware \"store\""},
                              {9, -1.0 / 3.0, 1e-9, "B", "a", "b"}};
  const std::string path = oracle::temp_dir("poi_rt") + "/p.csv";
  save_pois(pois, path);
  CHECK(load_pois(path) == pois);
}

TEST_CASE("text embeddings: alignment, missing ids, non-finite entries, extras") {
  const std::string d = oracle::temp_dir("tev");
  std::vector<PoiRecord> pois{{10, 0, 0, "A", "a", "b"}, {20, 0, 0, "B", "a", "b"}};
  std::vector<TextEmbedding> emb{{20, {1, 2, 3}}, {99, {0, 0, 1}}, {10, {4, 5, 6}}};
  save_text_embeddings(emb, d + "/t.tev");
  const auto loaded = load_text_embeddings(d + "/t.tev", pois);
  CHECK(loaded.dim == 3);
  CHECK(loaded.ignored == 1);
  REQUIRE(loaded.embeddings.size() == 2);
  CHECK(loaded.embeddings[0].poi_id == 10);
  CHECK(loaded.embeddings[0].vector == std::vector<float>{4, 5, 6});
  CHECK(loaded.embeddings[1].vector == std::vector<float>{1, 2, 3});

  std::vector<TextEmbedding> partial{{10, {1, 2, 3}}};
  save_text_embeddings(partial, d + "/partial.tev");
  CHECK_THROWS_WITH_AS(load_text_embeddings(d + "/partial.tev", pois), doctest::Contains("20"), FormatError);

  std::vector<TextEmbedding> inf{{10, {1, 2, 3}}, {20, {1, std::numeric_limits<float>::infinity(), 3}}};
  save_text_embeddings(inf, d + "/inf.tev");
  CHECK_THROWS_WITH_AS(load_text_embeddings(d + "/inf.tev", pois), doctest::Contains("20"), FormatError);

  std::vector<TextEmbedding> ragged{{10, {1, 2, 3}}, {20, {1, 2}}};
  CHECK_THROWS_AS(save_text_embeddings(ragged, d + "/ragged.tev"), ValidationError);

  // TEV1 byte layout: 16-byte header then (u64 id, dim x f32) records
  CHECK(oracle::slurp(d + "/t.tev").size() == 16 + 3 * (8 + 3 * 4));
  CHECK(oracle::slurp(d + "/t.tev").substr(0, 4) == "TEV1");
}

TEST_CASE("tokenize lowercases and splits on punctuation") {
  CHECK(tokenize("A place of Coffee-Shop, named O'Neill's.") ==
        std::vector<std::string>{"a", "place", "of", "coffee", "shop", "named", "o", "neill", "s"});
}

TEST_CASE("fallback_embed determinism, norm and token sensitivity") {
  const auto a = fallback_embed("A place of pub, a type of food, named Crown.", 384);
  const auto b = fallback_embed("A place of pub, a type of food, named Crown.", 384);
  CHECK(a == b);
  double n = 0;
  for (float v : a) n += double(v) * v;
  CHECK(std::abs(std::sqrt(n) - 1.0) < 1e-6);
  const auto c = fallback_embed("A place of pub, a type of food, named Anchor.", 384);
  CHECK(cosine(a, c) < 1.0 - 1e-9);
  CHECK_THROWS_AS(fallback_embed("...", 384), ValidationError);
  CHECK_THROWS_AS(fallback_embed("abc", 4), ValidationError);
}

TEST_CASE("shared categories are closer on average than disjoint descriptions") {
  CounterRng rng(5, "fallback_mc");
  auto word = [&](const char* prefix) { return std::string(prefix) + std::to_string(rng.next_u64() % 1000000); };
  double same = 0, disjoint = 0;
  for (int i = 0; i < 100; ++i) {
    const std::string l1 = word("cat"), l2 = word("sub");
    const auto p = fallback_embed(render_description({0, 0, 0, word("n"), l1, l2}), 128);
    const auto q = fallback_embed(render_description({0, 0, 0, word("n"), l1, l2}), 128);
    // no shared tokens at all
    const auto r = fallback_embed(word("x") + " " + word("y") + " " + word("z"), 128);
    const auto s = fallback_embed(word("u") + " " + word("v") + " " + word("w"), 128);
    same += cosine(p, q);
    disjoint += cosine(r, s);
  }
  CHECK(same / 100 > disjoint / 100);
}
