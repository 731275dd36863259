// Acceptance run: one PASS/FAIL line per criterion. Criteria 4-7 train the
// full desk pipeline into --run-dir.

#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>

#include "CLI11.hpp"
#include "gradcheck.hpp"
#include "small_model.hpp"
#include "xlate/codebleu.hpp"
#include "xlate/data.hpp"
#include "xlate/io.hpp"
#include "xlate/lora.hpp"
#include "xlate/pipeline.hpp"
#include "xlate/toy/generate.hpp"
#include "xlate/toy/render.hpp"

using namespace xlate;
using namespace xlate::testing;

namespace {

using Clock = std::chrono::steady_clock;

struct Result {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

// ---- 1. gradients

Result gradients() {
  const auto start = Clock::now();
  Result r;
  double worst = 0;
  auto note = [&](const std::string& op, const GradCheckResult& g) {
    worst = std::max(worst, g.max_rel_error);
    r.check(g.max_rel_error < 1e-4, op + " rel error " + fmt("%.2e", g.max_rel_error));
  };
  std::mt19937_64 rng(2024);
  int configs = 0;
  for (int trial = 0; trial < 20; ++trial, ++configs) {
    const Index b = 1 + trial % 2, s = 1 + trial % 4, d = 2 + trial % 3;
    const auto seed = static_cast<std::uint64_t>(trial);
    note("matmul", grad_check({random_tensor({s, d}, rng), random_tensor({d, 3}, rng)},
                              [&](const auto& in) { return project(matmul(in[0], in[1]), seed); }));
    note("linear", grad_check({random_tensor({b, s, d}, rng), random_tensor({3, d}, rng), random_tensor({3}, rng)},
                              [&](const auto& in) { return project(linear(in[0], in[1], in[2]), seed); }));
    note("add/mul", grad_check({random_tensor({b, s, d}, rng), random_tensor({b, s, d}, rng)},
                               [&](const auto& in) { return project(mul(add(in[0], in[1]), in[1]), seed); }));
    note("scale/reshape", grad_check({random_tensor({b, s, d}, rng)}, [&](const auto& in) {
           return project(reshape(scale(in[0], 1.7), {b * s, d}), seed);
         }));
    note("mean", grad_check({random_tensor({b, s, d}, rng)}, [&](const auto& in) { return mean(mul(in[0], in[0])); }));
    note("gelu", grad_check({random_tensor({b, s, d}, rng)}, [&](const auto& in) { return project(gelu(in[0]), seed); }));
    note("layer_norm", grad_check({random_tensor({b, s, d}, rng), random_tensor({d}, rng), random_tensor({d}, rng)},
                                  [&](const auto& in) { return project(layer_norm(in[0], in[1], in[2]), seed); }));
    note("embedding", grad_check({random_tensor({5, d}, rng)}, [&](const auto& in) {
           const int ids[] = {4, 0, 4, 2};
           return project(embedding(in[0], ids, {2, 2}), seed);
         }));
    note("softmax", grad_check({random_tensor({b, s, d}, rng)},
                               [&](const auto& in) { return project(softmax(in[0], static_cast<std::size_t>(trial % 3)), seed); }));
    note("max_over_sequence", grad_check({random_tensor({b, s, d}, rng)},
                                         [&](const auto& in) { return project(max_over_sequence(in[0]), seed); }));
    note("dropout", grad_check({random_tensor({b, s, d}, rng)},
                               [&](const auto& in) { return project(dropout(in[0], 0.3, seed), seed); }));
    note("batch_scale", grad_check({random_tensor({b, s, d}, rng), random_tensor({b, 3}, rng)},
                                   [&](const auto& in) { return project(batch_scale(in[0], in[1], trial % 3), seed); }));
    note("add_bias", grad_check({random_tensor({b, s, d}, rng), random_tensor({d}, rng)},
                                [&](const auto& in) { return project(add_bias(in[0], in[1]), seed); }));
    const AttentionLayout layout{2, 2, trial % 2 == 0};
    note("causal_attention", grad_check({random_tensor({b, s, layout.fused_width()}, rng)},
                                        [&](const auto& in) { return project(causal_attention(in[0], layout), seed); }));
    std::vector<int> targets;
    std::vector<double> mask;
    for (Index i = 0; i < b * s; ++i) {
      targets.push_back(static_cast<int>(rng() % static_cast<std::uint64_t>(d)));
      mask.push_back(i % 3 == 2 ? 0.0 : 1.0);
    }
    mask[0] = 1.0;
    note("cross_entropy_masked", grad_check({random_tensor({b, s, d}, rng)},
                                            [&](const auto& in) { return cross_entropy_masked(in[0], targets, mask); }));

    // Whole train-mode forward: gate softmax, weighted expert mixing, dropout.
    const ModelConfig c = tiny_config(7, trial % 2 == 0, 1 + trial % 2);
    auto m = tiny_model<double>(c, 100 + seed);
    const TokenBatch t = random_tokens(2, 4, c.vocab_size, rng);
    std::vector<int> tg(8);
    for (auto& x : tg) x = static_cast<int>(rng() % 7);
    const std::vector<double> mk{1, 1, 0, 1, 1, 1, 1, 0};
    const std::vector<int> prompt{3, 2};
    std::vector<Tensor<double>> params{m.gate->weight,          m.gate->bias,
                                       m.experts[0].sites[0].a, m.experts[1].sites[1].b,
                                       m.experts[2].sites[2].a, m.backbone.blocks[0].qkv_weight,
                                       m.backbone.position_embedding};
    note("train-mode forward", grad_check(params, [&](const std::vector<Tensor<double>>&) {
           const auto ctx = route(m, t, RouteMode::train, prompt);
           ForwardOptions o;
           o.training = true;
           o.dropout_seed = 77;
           return cross_entropy_masked(forward_logits(m, t, ctx, o), tg, mk);
         }));
  }
  const double elapsed = seconds_since(start);
  r.check(elapsed < 120, "took " + fmt("%.1f s", elapsed));
  if (r.pass) r.detail = std::to_string(configs) + " configs, max rel error " + fmt("%.2e", worst) + ", " + fmt("%.1f s", elapsed);
  return r;
}

// ---- 2. merge equivalence

template <typename Scalar>
void merge_trials(Result& r, double tol, int trials, std::uint64_t seed, bool bit_exact_unmerge, double& worst) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto rand = [&](Shape s) {
    Vec<Scalar> v(numel(s));
    for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(normal(rng));
    return Tensor<Scalar>(std::move(s), std::move(v));
  };
  for (int trial = 0; trial < trials; ++trial) {
    const Index d_in = 2 + static_cast<Index>(rng() % 15), d_out = 2 + static_cast<Index>(rng() % 15);
    const int rank = 1 + static_cast<int>(rng() % 8);
    const double alpha = 0.5 + static_cast<double>(rng() % 64);
    Tensor<Scalar> w = rand({d_out, d_in});
    const Tensor<Scalar> bias = rand({d_out});
    const LoraExpert<Scalar> e{"x", {rank, alpha, 0.0}, {{rand({rank, d_in}), rand({d_out, rank})}}};
    const Tensor<Scalar> x = rand({2, 3, d_in});
    const ExpertMix<Scalar> mix{ExpertMix<Scalar>::Kind::single, 0, {}, {}};
    const auto parallel = lora_forward(x, w, bias, std::vector{e}, 0, mix, false, 0);
    const Vec<Scalar> original = w.data();
    const auto merged = merge(w, e.sites[0], e.scaling());
    const auto fused = linear(x, w, bias);
    const double ref = std::max(1.0, static_cast<double>(parallel.data().cwiseAbs().maxCoeff()));
    const double err = static_cast<double>((parallel.data() - fused.data()).cwiseAbs().maxCoeff()) / ref;
    worst = std::max(worst, err);
    r.check(err <= tol, "trial " + std::to_string(trial) + " error " + fmt("%.2e", err));
    unmerge(w, merged);
    if (bit_exact_unmerge) r.check((w.data().array() == original.array()).all(), "unmerge not bit-exact");
  }
}

Result merge_equivalence() {
  Result r;
  double worst64 = 0, worst32 = 0;
  merge_trials<double>(r, 1e-10, 60, 11, true, worst64);
  merge_trials<float>(r, 1e-5, 60, 12, false, worst32);
  if (r.pass) {
    r.detail = "60+60 configs, float64 " + fmt("%.1e", worst64) + ", float32 " + fmt("%.1e", worst32) + ", unmerge bit-exact";
  }
  return r;
}

// ---- 3. parameter counts

Result parameter_counts() {
  Result r;
  const std::int64_t lora = count_lora_params(ModelConfig::full_scale(), 4);
  const std::int64_t gate = count_gate_params(6144, 5);
  r.check(lora == 8888320, "count_lora_params = " + std::to_string(lora));
  r.check(5 * lora == 44441600, "five experts = " + std::to_string(5 * lora));
  r.check(std::round(100.0 * static_cast<double>(lora) / 15.5e9 * 100) / 100 == 0.06, "share does not round to 0.06%");
  r.check(gate == 30725, "count_gate_params = " + std::to_string(gate));
  if (r.pass) r.detail = "LoRA 8,888,320 per expert (" + fmt("%.4f%%", 100.0 * static_cast<double>(lora) / 15.5e9) + "), gate 30,725";
  return r;
}

// ---- 4. freeze audits

Result freeze_audits(const std::vector<PhaseReport>& phases) {
  Result r;
  std::string backbone;
  for (const auto& p : phases) {
    const AuditReport audit = p.report.audit();
    const auto changed = audit.changed_groups();
    if (p.name == "pretrain") {
      r.check(changed == std::vector<std::string>{"backbone"}, "pretrain changed " + std::to_string(changed.size()) + " groups");
      backbone = p.report.hashes_after.at("backbone");
      continue;
    }
    r.check(audit.ok(), p.name + ": " + audit.summary());
    r.check(changed.size() == 1 && p.report.expected_changed.count(changed[0]) == 1, p.name + " changed the wrong groups");
    r.check(p.report.hashes_before.at("backbone") == backbone && p.report.hashes_after.at("backbone") == backbone,
            p.name + " moved the backbone");
  }
  r.check(phases.size() == 7, "expected 7 phases");
  if (r.pass) r.detail = "each expert phase changed only its expert, gate phase only the gate, backbone " + backbone;
  return r;
}

// ---- 5-7. trained pipeline

constexpr int kCpp = 0, kCsharp = 1, kJs = 2, kJava = 3, kPhp = 4;

Result routing(const EvaluationSummary& ev, double pipeline_seconds) {
  Result r;
  const ConfusionMatrix& m = ev.routing;
  for (int l : {kCpp, kJs, kPhp}) {
    r.check(m.accuracy(l) >= 0.95, std::string(lang_name(kSourceLangs[l])) + " " + fmt("%.1f%%", 100 * m.accuracy(l)));
  }
  for (int l : {kCsharp, kJava}) {
    r.check(m.accuracy(l) >= 0.60, std::string(lang_name(kSourceLangs[l])) + " " + fmt("%.1f%%", 100 * m.accuracy(l)));
  }
  const double block = m.block_share({kCsharp, kJava});
  r.check(block >= 0.95, "csharp/java block share " + fmt("%.1f%%", 100 * block));
  r.check(pipeline_seconds < 45 * 60, "pipeline took " + fmt("%.0f s", pipeline_seconds));
  std::string acc;
  for (int l = 0; l < kNumSourceLangs; ++l) acc += std::string(l ? " " : "") + std::string(lang_name(kSourceLangs[l])) + fmt(" %.1f", 100 * m.accuracy(l));
  r.detail = acc + ", block " + fmt("%.1f%%", 100 * block) + ", pipeline " + fmt("%.0f s", pipeline_seconds) +
             (r.pass ? "" : " | " + r.detail);
  return r;
}

Result translation(const EvaluationSummary& ev) {
  Result r;
  const double gap = 100 * (ev.routed.overall.composite - ev.baseline.overall.composite);
  r.check(gap >= 30, "gap " + fmt("%.2f", gap));
  r.check(ev.routed.parse_rate >= 0.80, "parse rate " + fmt("%.1f%%", 100 * ev.routed.parse_rate));
  double worst_shortfall = 0;
  for (int l = 0; l < kNumSourceLangs; ++l) {
    double best = 0;
    for (const auto& e : ev.per_expert) best = std::max(best, e.per_lang[static_cast<std::size_t>(l)].composite);
    const double shortfall = 100 * (best - ev.routed.per_lang[static_cast<std::size_t>(l)].composite);
    worst_shortfall = std::max(worst_shortfall, shortfall);
    r.check(shortfall <= 1.0, std::string(lang_name(kSourceLangs[l])) + " routed " + fmt("%.2f", shortfall) + " below best expert");
  }
  r.detail = "CodeBLEU " + fmt("%.2f", 100 * ev.routed.overall.composite) + " vs baseline " +
             fmt("%.2f", 100 * ev.baseline.overall.composite) + ", parse " + fmt("%.1f%%", 100 * ev.routed.parse_rate) +
             ", worst shortfall vs best expert " + fmt("%.2f", worst_shortfall) + (r.pass ? "" : " | " + r.detail);
  return r;
}

Result generic_tag(const EvaluationSummary& ev) {
  Result r;
  const double a = ev.routing.overall_accuracy(), b = ev.routing_generic.overall_accuracy();
  const double change = 100 * std::abs(a - b);
  r.check(change <= 5, "change " + fmt("%.1f points", change));
  r.detail = "routing " + fmt("%.1f%%", 100 * a) + " with tags, " + fmt("%.1f%%", 100 * b) + " with <code>" + (r.pass ? "" : " | " + r.detail);
  return r;
}

// ---- 8. CodeBLEU suite

TokenList rename_identifiers(const TokenList& tokens) {
  const std::set<std::string> keep = [] {
    auto k = python_keyword_set();
    k.insert({"NEWLINE", "INDENT", "DEDENT", "print"});
    return k;
  }();
  std::map<std::string, std::string> names;
  TokenList out;
  for (const auto& t : tokens) {
    const bool ident = (std::isalpha(static_cast<unsigned char>(t[0])) || t[0] == '_') && keep.count(t) == 0;
    out.push_back(ident ? names.try_emplace(t, "v" + std::to_string(names.size())).first->second : t);
  }
  return out;
}

Result codebleu_suite() {
  Result r;
  std::mt19937_64 rng(31);
  for (int i = 0; i < 100; ++i) {
    const TokenList py = toy::render_tokens(toy::generate_program(rng), Lang::py);
    r.check(fmt("%.2f", 100 * codebleu(py, py).composite) == "100.00", "identical pair below 100.00");
    const TokenList renamed = rename_identifiers(py);
    r.check(syntax_match(renamed, py) == 1.0, "syntax_match not rename-invariant");
  }
  const double fixture = bleu(toy::split_tokens("a b c d e"), toy::split_tokens("a b c d f"));
  const double oracle = std::pow(4.0 / 5 * 3.0 / 4 * 2.0 / 3 * 1.0 / 2, 0.25);
  r.check(std::abs(fixture - oracle) < 1e-12 && std::abs(fixture - 0.6687) < 1e-4, "BLEU fixture " + fmt("%.6f", fixture));
  const double vacuous = dataflow_match(toy::split_tokens("print ( 2 ) NEWLINE"), toy::split_tokens("print ( 1 ) NEWLINE"));
  r.check(vacuous == 1.0, "vacuous dataflow " + fmt("%.3f", vacuous));
  if (r.pass) r.detail = "identical 100.00, BLEU fixture " + fmt("%.4f", fixture) + ", rename invariance, vacuous dataflow 1.0";
  return r;
}

// ---- 9. data rules

Result data_rules() {
  Result r;
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 2 + rng() % 40;
    std::vector<TranslationPair> programs;
    std::vector<std::size_t> counts;
    for (std::size_t i = 0; i < n; ++i) {
      TranslationPair p{Lang::cpp, "p", "q", Granularity::program, {}};
      p.snippets.push_back({Lang::cpp, "s", "q", Granularity::snippet, {}});
      programs.push_back(p);
      counts.push_back(1 + rng() % 200);
    }
    const CurriculumSplit s = curriculum_split(programs, counts);
    const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
    const std::size_t first = std::accumulate(counts.begin(), counts.begin() + static_cast<std::ptrdiff_t>(s.boundary), std::size_t{0});
    // Token mass crosses half exactly at the boundary program.
    r.check(2 * (first - counts[s.boundary - 1]) < total, "split past the half");
    r.check(s.boundary == n - 1 || 2 * first >= total, "split before the half");
  }
  for (std::size_t n = 2; n <= 400; ++n) {
    std::vector<TranslationSample> samples(n);
    for (std::size_t i = 0; i < n; ++i) {
      samples[i].ids.assign(1 + rng() % 50, 5);
      samples[i].mask.assign(samples[i].ids.size(), 1.0f);
    }
    const PaddedBatch b = pad_batch(samples, 0);
    r.check(b.selection.dropped.size() == (n + 19) / 20, "pad_batch dropped " + std::to_string(b.selection.dropped.size()) + " of " + std::to_string(n));
  }
  const std::size_t sizes[] = {9139, 8826, 8182, 8991, 3003};
  PerLanguage corpora;
  for (std::size_t i = 0; i < 5; ++i) corpora[i].assign(sizes[i], TranslationPair{kSourceLangs[i], "a", "b", Granularity::program, {}});
  const std::size_t moe = build_moe_dataset(corpora).size();
  r.check(moe == 15015, "MoE set " + std::to_string(moe));
  if (r.pass) r.detail = "curriculum split 500 cases, pad_batch n=2..400, MoE set 15,015";
  return r;
}

void print(int n, const std::string& name, const Result& r) {
  std::printf("criterion %d %-22s %s  %s\n", n, name.c_str(), r.pass ? "PASS" : "FAIL", r.detail.c_str());
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
  retain_freed_memory();
  CLI::App app{"Acceptance criteria"};
  std::string run_dir = "acceptance_run", config_path;
  bool verbose = false;
  app.add_option("--run-dir", run_dir, "Where the pipeline writes its corpus, checkpoint and reports");
  app.add_option("--config", config_path, "Run configuration (default: desk)");
  app.add_flag("--verbose", verbose, "Log training progress to stderr");
  CLI11_PARSE(app, argc, argv);

  int failed = 0;
  auto report = [&](int n, const std::string& name, const std::function<Result()>& fn) {
    Result r;
    try {
      r = fn();
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    failed += r.pass ? 0 : 1;
    print(n, name, r);
  };

  report(1, "gradients", gradients);
  report(2, "merge-equivalence", merge_equivalence);
  report(3, "parameter-counts", parameter_counts);

  std::optional<PipelineRun<float>> run;
  std::optional<EvaluationSummary> ev;
  double pipeline_seconds = 0;
  std::string pipeline_error;
  try {
    RunConfig c = config_path.empty() ? RunConfig::desk() : RunConfig::load(config_path);
    c.output_dir = run_dir;
    c.validate();
    const auto start = Clock::now();
    const Logger log = [&](const std::string& m) {
      if (verbose) std::fprintf(stderr, "[%7.1fs] %s\n", seconds_since(start), m.c_str());
    };
    run = run_pipeline<float>(c, log);
    ev = evaluate_all(run->model, run->workspace, c);
    pipeline_seconds = seconds_since(start);
    write_report(c, "evaluation", ev->to_json());
    std::cout << ev->routing.table() << ev->routed.table("gate-routed model");
  } catch (const std::exception& e) {
    pipeline_error = e.what();
  }
  auto need_pipeline = [&](const std::function<Result()>& fn) {
    return [&, fn] { return ev ? fn() : Result{false, "pipeline failed: " + pipeline_error}; };
  };
  report(4, "freeze-audits", need_pipeline([&] { return freeze_audits(run->phases); }));
  report(5, "routing", need_pipeline([&] { return routing(*ev, pipeline_seconds); }));
  report(6, "translation-quality", need_pipeline([&] { return translation(*ev); }));
  report(7, "generic-tag", need_pipeline([&] { return generic_tag(*ev); }));
  report(8, "codebleu-suite", codebleu_suite);
  report(9, "data-pipeline", data_rules);
  std::printf("%d of 9 criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
