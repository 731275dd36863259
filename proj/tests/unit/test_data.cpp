#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "xlate/data.hpp"
#include "xlate/errors.hpp"
#include "xlate/io.hpp"
#include "xlate/toy/parse.hpp"

using namespace xlate;

namespace {

CorpusOptions small_options() {
  CorpusOptions o;
  o.programs_per_language = 60;
  o.test_per_language = 10;
  o.python_programs = 40;
  return o;
}

const ToyCorpus& corpus() {
  static const ToyCorpus c = generate_toy_corpus(5, small_options());
  return c;
}

std::vector<std::string> all_texts(const ToyCorpus& c) {
  std::vector<std::string> out = c.python;
  for (const auto& lang : c.train) {
    for (const auto& p : lang) {
      out.push_back(sample_text(lang_tag(p.src_lang), p.src_code, p.py_code));
      for (const auto& s : p.snippets) out.push_back(sample_text(lang_tag(s.src_lang), s.src_code, s.py_code));
    }
  }
  return out;
}

const Tokenizer& tokenizer() {
  static const Tokenizer t = Tokenizer::train(all_texts(corpus()), 512);
  return t;
}

TranslationSample sample_of_length(std::size_t n) {
  TranslationSample s;
  s.ids.assign(n, 7);
  s.mask.assign(n, 1.0f);
  return s;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("xlate_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

void write_file(const std::filesystem::path& p, const std::string& body) { std::ofstream(p) << body; }

}  // namespace

TEST(Pretokenize, LeadingSpaceAttachesToWord) {
  const auto chunks = pretokenize("ab  cd e");
  ASSERT_EQ(chunks.size(), 4u);
  EXPECT_EQ(chunks[0], "ab");
  EXPECT_EQ(chunks[1], " ");
  EXPECT_EQ(chunks[2], " cd");
  EXPECT_EQ(chunks[3], " e");
}

TEST(Tokenizer, SpecialTokensAreAtomic) {
  const Tokenizer& t = tokenizer();
  for (auto name : kSpecialTokens) {
    const auto bare = t.encode(name);
    ASSERT_EQ(bare.size(), 1u) << name;
    EXPECT_EQ(bare[0], t.special_id(name, false));
    const auto spaced = t.encode(" " + std::string(name));
    ASSERT_EQ(spaced.size(), 1u);
    EXPECT_EQ(spaced[0], t.special_id(name, true));
    EXPECT_TRUE(t.is_special(spaced[0], name));
  }
  // Structural tokens are never produced from text.
  const auto ids = t.encode("<pad> <end-of-text>");
  EXPECT_EQ(t.decode(ids), "<pad> <end-of-text>");
  for (int id : ids) EXPECT_FALSE(t.is_any_special(id));
}

TEST(Tokenizer, RoundTripOnCorpus) {
  const Tokenizer& t = tokenizer();
  EXPECT_LE(t.merge_count(), 512);
  EXPECT_GT(t.merge_count(), 100);
  for (const auto& text : all_texts(corpus())) ASSERT_EQ(t.decode(t.encode(text)), text);
}

TEST(Tokenizer, RoundTripOnArbitraryBytes) {
  const Tokenizer& t = tokenizer();
  const std::string cases[] = {"", " ", "   lead", "trail  ", "a<py>b", "x\ny\tz", "caf\xc3\xa9 \xff\x01", "NEWLINEx NEWLINE"};
  for (const auto& c : cases) EXPECT_EQ(t.decode(t.encode(c)), c);
  const Tokenizer bytes;
  EXPECT_EQ(bytes.merge_count(), 0);
  EXPECT_EQ(bytes.decode(bytes.encode("int x = 1 ;")), "int x = 1 ;");
}

TEST(Tokenizer, MergesCompressCorpusText) {
  const Tokenizer& t = tokenizer();
  const std::string text = corpus().python.front();
  EXPECT_LT(t.encode(text).size() * 2, Tokenizer().encode(text).size());
}

TEST(Tokenizer, SaveLoadIsIdentity) {
  const auto dir = temp_dir("tok");
  tokenizer().save(dir / "vocab.json");
  const Tokenizer loaded = Tokenizer::load(dir / "vocab.json");
  EXPECT_EQ(loaded, tokenizer());
  EXPECT_EQ(loaded.vocab_size(), tokenizer().vocab_size());
  const std::string text = corpus().python.back();
  EXPECT_EQ(loaded.encode(text), tokenizer().encode(text));
  write_file(dir / "bad.json", "{\"format\":\"other\"}");
  EXPECT_THROW(Tokenizer::load(dir / "bad.json"), DataError);
}

TEST(BuildSample, LanguageTagLayout) {
  const Tokenizer& t = tokenizer();
  const TranslationPair& p = corpus().train[0][0];
  const TranslationSample s = build_sample(p, t, {});
  EXPECT_EQ(s.ids.front(), t.special_id("<cpp>", false));
  EXPECT_EQ(s.ids.back(), t.eot_id());
  EXPECT_EQ(std::count_if(s.ids.begin(), s.ids.end(), [&](int id) { return t.is_special(id, "<py>"); }), 1);
  EXPECT_TRUE(t.is_special(s.ids[static_cast<std::size_t>(s.prompt_length) - 1], "<py>"));
  EXPECT_EQ(s.mask.size(), s.ids.size());
  EXPECT_EQ(s.mask[0], 0.0f);
  EXPECT_EQ(std::accumulate(s.mask.begin(), s.mask.end(), 0.0f), static_cast<float>(s.ids.size() - 1));
}

TEST(BuildSample, GenericTagAndTargetOnlyMask) {
  const Tokenizer& t = tokenizer();
  const TranslationPair& p = corpus().train[3][0];
  SampleOptions o;
  o.tag = TagMode::generic;
  o.target_only = true;
  const TranslationSample s = build_sample(p, t, o);
  EXPECT_EQ(s.ids.front(), t.special_id("<code>", false));
  for (int i = 0; i < static_cast<int>(s.ids.size()); ++i) {
    EXPECT_EQ(s.mask[static_cast<std::size_t>(i)], i >= s.prompt_length ? 1.0f : 0.0f);
  }
}

TEST(BuildSample, JavaSnippetRoundTrip) {
  const TranslationPair p{Lang::java, "int x = 3 ; System . out . println ( x ) ;", "x = 3 NEWLINE print ( x ) NEWLINE",
                          Granularity::snippet, {}};
  const TranslationSample s = build_sample(p, tokenizer(), {});
  EXPECT_EQ(tokenizer().decode(s.ids), "<java> int x = 3 ; System . out . println ( x ) ; <py> x = 3 NEWLINE print ( x ) NEWLINE");
}

TEST(BuildSample, RejectsOverlongAndInvalid) {
  SampleOptions o;
  o.context_len = 8;
  EXPECT_THROW(build_sample(corpus().train[1][0], tokenizer(), o), ContextError);
  TranslationPair empty{Lang::cpp, "", "x = 1 NEWLINE", Granularity::program, {}};
  EXPECT_THROW(build_sample(empty, tokenizer(), {}), DataError);
  TranslationPair two{Lang::cpp, "a <py> b", "x = 1 NEWLINE", Granularity::program, {}};
  EXPECT_THROW(build_sample(two, tokenizer(), {}), DataError);
}

TEST(BuildSample, CopySamplePromptEndsAtSecondSeparator) {
  const std::string py = corpus().python[0];
  const TranslationSample s = build_copy_sample(py, tokenizer(), 1024);
  EXPECT_EQ(s.ids.front(), tokenizer().special_id("<py>", false));
  EXPECT_EQ(s.ids[static_cast<std::size_t>(s.prompt_length) - 1], tokenizer().special_id("<py>", true));
  EXPECT_EQ(tokenizer().decode(std::vector<int>(s.ids.begin() + s.prompt_length, s.ids.end())), " " + py);
}

TEST(PadBatch, DropsCeilFivePercent) {
  std::vector<TranslationSample> samples;
  for (std::size_t n = 1; n <= 20; ++n) samples.push_back(sample_of_length(n));
  const PaddedBatch b = pad_batch(samples, 0);
  EXPECT_EQ(b.selection.dropped, std::vector<std::size_t>{19});
  EXPECT_EQ(b.batch, 19u);
  EXPECT_EQ(b.seq, 19u);
  // Row of length 1 is padded with zero-mask pads.
  EXPECT_EQ(b.ids[1], 0);
  EXPECT_EQ(b.mask[1], 0.0f);
}

TEST(PadBatch, EqualLengthsAndSingleSample) {
  std::vector<TranslationSample> same(10, sample_of_length(6));
  const PaddedBatch b = pad_batch(same, 0);
  EXPECT_EQ(b.batch, 9u);  // ceil(0.5) = 1 still dropped
  EXPECT_EQ(b.seq, 6u);
  EXPECT_TRUE(std::all_of(b.mask.begin(), b.mask.end(), [](float m) { return m == 1.0f; }));
  const PaddedBatch one = pad_batch(std::vector<TranslationSample>{sample_of_length(4)}, 0);
  EXPECT_EQ(one.batch, 1u);
  EXPECT_TRUE(one.selection.dropped.empty());
}

TEST(PadBatch, IntegerCeilingHasNoFloatingPointDrift) {
  for (std::size_t n : {20u, 40u, 60u, 100u, 140u}) {
    EXPECT_EQ(select_shortest(std::vector<std::size_t>(n, 1)).dropped.size(), n / 20) << n;
  }
  EXPECT_EQ(select_shortest(std::vector<std::size_t>(21, 1)).dropped.size(), 2u);
}

TEST(PadBatch, PropertyNeverOverDropsOrTruncates) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 50;
    std::vector<TranslationSample> samples;
    for (std::size_t i = 0; i < n; ++i) samples.push_back(sample_of_length(1 + rng() % 30));
    const PaddedBatch b = pad_batch(samples, 0);
    const auto limit = static_cast<std::size_t>(std::ceil(0.05 * static_cast<double>(n) - 1e-9));
    EXPECT_LE(b.selection.dropped.size(), limit);
    EXPECT_GE(b.batch, 1u);
    for (std::size_t r = 0; r < b.batch; ++r) {
      const auto& s = samples[b.selection.kept[r]];
      EXPECT_GE(b.seq, s.ids.size());
      EXPECT_EQ(std::accumulate(b.mask.begin() + static_cast<std::ptrdiff_t>(r * b.seq),
                                b.mask.begin() + static_cast<std::ptrdiff_t>((r + 1) * b.seq), 0.0f),
                static_cast<float>(s.ids.size()));
    }
    for (std::size_t d : b.selection.dropped) {
      for (std::size_t k : b.selection.kept) EXPECT_GE(samples[d].ids.size(), samples[k].ids.size());
    }
  }
}

namespace {

std::vector<TranslationPair> programs(std::size_t n) {
  std::vector<TranslationPair> out;
  for (std::size_t i = 0; i < n; ++i) {
    TranslationPair p{Lang::cpp, "p" + std::to_string(i), "q", Granularity::program, {}};
    p.snippets.push_back({Lang::cpp, "s" + std::to_string(i), "q", Granularity::snippet, {}});
    out.push_back(p);
  }
  return out;
}

}  // namespace

TEST(CurriculumSplit, WorkedExamples) {
  const auto p4 = programs(4);
  const std::vector<std::size_t> c4{30, 30, 20, 20};
  const CurriculumSplit a = curriculum_split(p4, c4);
  EXPECT_EQ(a.boundary, 2u);
  ASSERT_EQ(a.snippets.size(), 2u);
  EXPECT_EQ(a.snippets[1].src_code, "s1");
  ASSERT_EQ(a.programs.size(), 2u);
  EXPECT_EQ(a.programs[0].src_code, "p2");

  const auto p3 = programs(3);
  const std::vector<std::size_t> c3{100, 1, 1};
  const CurriculumSplit b = curriculum_split(p3, c3);
  EXPECT_EQ(b.boundary, 1u);
  EXPECT_EQ(b.programs.size(), 2u);

  const auto p2 = programs(2);
  const std::vector<std::size_t> c2{5, 5};
  EXPECT_EQ(curriculum_split(p2, c2).boundary, 1u);

  const auto p1 = programs(1);
  const std::vector<std::size_t> c1{5};
  EXPECT_THROW(curriculum_split(p1, c1), DataError);
}

TEST(CurriculumSplit, PropertyHalvesWithinOneBoundaryProgram) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 2 + rng() % 30;
    std::vector<std::size_t> counts;
    for (std::size_t i = 0; i < n; ++i) counts.push_back(1 + rng() % 100);
    const auto ps = programs(n);
    const CurriculumSplit s = curriculum_split(ps, counts);
    const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
    const std::size_t first = std::accumulate(counts.begin(), counts.begin() + static_cast<std::ptrdiff_t>(s.boundary), std::size_t{0});
    const std::size_t before_boundary = first - counts[s.boundary - 1];
    EXPECT_LT(2 * before_boundary, total);
    if (s.boundary < n - 1) {
      EXPECT_GE(2 * first, total);
    }
    EXPECT_EQ(s.snippets.size() + s.programs.size(), n);
    EXPECT_GE(s.programs.size(), 1u);
  }
}

TEST(MoeDataset, FullScaleSizes) {
  const std::vector<std::size_t> sizes{9139, 8826, 8182, 8991, 3003};
  EXPECT_EQ(balanced_take(sizes) * sizes.size(), 15015u);
  PerLanguage corpora;
  for (std::size_t i = 0; i < 5; ++i) {
    corpora[i].assign(sizes[i], TranslationPair{kSourceLangs[i], "a", "b", Granularity::program, {}});
  }
  EXPECT_EQ(build_moe_dataset(corpora).size(), 15015u);
}

TEST(MoeDataset, ToySizesAndBalance) {
  PerLanguage corpora;
  const std::size_t sizes[] = {10, 10, 10, 10, 7};
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t k = 0; k < sizes[i]; ++k) {
      corpora[i].push_back({kSourceLangs[i], "src" + std::to_string(k), "py", Granularity::program, {}});
    }
  }
  const auto set = build_moe_dataset(corpora);
  ASSERT_EQ(set.size(), 35u);
  for (Lang l : kSourceLangs) EXPECT_EQ(std::count_if(set.begin(), set.end(), [&](const auto& p) { return p.src_lang == l; }), 7);
  EXPECT_EQ(set[6].src_code, "src6");  // first n, corpus order

  PerLanguage singletons;
  for (std::size_t i = 0; i < 5; ++i) singletons[i].push_back({kSourceLangs[i], "a", "b", Granularity::program, {}});
  EXPECT_EQ(build_moe_dataset(singletons).size(), 5u);
  singletons[2].clear();
  EXPECT_THROW(build_moe_dataset(singletons), DataError);
}

TEST(Detokenize, HandExpansions) {
  EXPECT_EQ(detokenize_python("a NEWLINE b"), "a\nb");
  EXPECT_EQ(detokenize_python("if x : NEWLINE INDENT y NEWLINE DEDENT z"), "if x :\n    y\nz");
  EXPECT_THROW(detokenize_python("a NEWLINE DEDENT b"), DataError);
  EXPECT_EQ(serialize_python("if x :\n    y\nz\n"), "if x : NEWLINE INDENT y NEWLINE DEDENT z NEWLINE");
  EXPECT_THROW(serialize_python("if x :\n  y\n"), DataError);
}

TEST(Detokenize, RoundTripOnCorpus) {
  for (const auto& py : corpus().python) {
    ASSERT_EQ(serialize_python(detokenize_python(py)), py);
  }
  for (const auto& lang : corpus().train) {
    for (const auto& p : lang) ASSERT_EQ(serialize_python(detokenize_python(p.py_code)), p.py_code);
  }
}

TEST(ToyCorpus, DeterministicAndParsable) {
  const ToyCorpus again = generate_toy_corpus(5, small_options());
  EXPECT_EQ(again.train, corpus().train);
  EXPECT_EQ(again.python, corpus().python);
  EXPECT_NE(generate_toy_corpus(6, small_options()).train, corpus().train);
  for (std::size_t l = 0; l < kSourceLangs.size(); ++l) {
    EXPECT_EQ(corpus().train[l].size(), 60u);
    EXPECT_EQ(corpus().test[l].size(), 10u);
    for (const auto& p : corpus().test[l]) {
      EXPECT_NO_THROW(toy::parse(p.py_code, Lang::py));
      for (const auto& q : corpus().train[l]) EXPECT_NE(p.py_code, q.py_code);
    }
  }
  for (const auto& py : corpus().python) EXPECT_NO_THROW(toy::parse(py, Lang::py));
}

TEST(ToyCorpus, WriteReadRoundTrip) {
  const auto dir = temp_dir("corpus");
  write_corpus(corpus(), 5, dir);
  const ToyCorpus back = read_corpus(dir);
  EXPECT_EQ(back.train, corpus().train);
  EXPECT_EQ(back.test, corpus().test);
  EXPECT_EQ(back.python, corpus().python);
  const auto manifest = read_json(dir / "manifest.json");
  EXPECT_EQ(manifest["languages"]["php"]["train"]["program"], 60);
  // Byte-identical when written twice with the same seed.
  const auto dir2 = temp_dir("corpus2");
  write_corpus(generate_toy_corpus(5, small_options()), 5, dir2);
  EXPECT_EQ(read_text(dir / "train" / "java.jsonl"), read_text(dir2 / "train" / "java.jsonl"));
}

TEST(IngestXlcost, PairsLines) {
  const auto dir = temp_dir("ingest");
  write_file(dir / "a.cpp", "int x = 1 ;\ncout << 2 << endl ;\n");
  write_file(dir / "a.py", "x = 1 NEWLINE\nprint ( 2 ) NEWLINE\n");
  const auto records = ingest_xlcost(dir / "a.cpp", dir / "a.py", Lang::cpp);
  ASSERT_EQ(records.size(), 2u);
  EXPECT_EQ(records[1], (nlohmann::json{{"cpp", "cout << 2 << endl ;"}, {"py", "print ( 2 ) NEWLINE"}}));
  EXPECT_EQ(records[0].size(), 2u);

  write_file(dir / "e.cpp", "");
  write_file(dir / "e.py", "");
  EXPECT_TRUE(ingest_xlcost(dir / "e.cpp", dir / "e.py", Lang::cpp).empty());

  write_file(dir / "b.py", "x = 1 NEWLINE\n");
  try {
    ingest_xlcost(dir / "a.cpp", dir / "b.py", Lang::cpp);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("has 2 samples"), std::string::npos);
    EXPECT_NE(what.find("has 1"), std::string::npos);
  }
}
