// xlate: corpus -> preprocess -> pretrain -> train-expert -> train-gate -> evaluate -> translate.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "xlate/checkpoint.hpp"
#include "xlate/io.hpp"
#include "xlate/pipeline.hpp"
#include "xlate/toy/parse.hpp"

using namespace xlate;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kNumeric = 4 };

struct Options {
  std::string config_path;
  std::string run_dir;
  bool force = false;
  bool quiet = false;
};

const auto g_start = std::chrono::steady_clock::now();

void log_line(const std::string& msg) {
  const double t = std::chrono::duration<double>(std::chrono::steady_clock::now() - g_start).count();
  std::fprintf(stderr, "[%7.1fs] %s\n", t, msg.c_str());
}

RunConfig load_config(const Options& o) {
  RunConfig c = o.config_path.empty() ? RunConfig::desk() : RunConfig::load(o.config_path);
  if (!o.run_dir.empty()) c.output_dir = o.run_dir;
  c.validate();
  return c;
}

Lang require_lang(const std::string& name) {
  const auto l = parse_lang(name);
  if (!l || *l == Lang::py) throw ConfigError("unknown source language: " + name + " (cpp, csharp, js, java, php)");
  return *l;
}

std::string collapse_whitespace(const std::string& text) {
  std::istringstream in(text);
  std::string word, out;
  while (in >> word) out += (out.empty() ? "" : " ") + word;
  return out;
}

void print_audit(const TrainReport& r) {
  std::cout << r.phase << ": " << r.losses.size() << " steps, " << r.wall_seconds << " s";
  if (!r.losses.empty()) std::cout << ", loss " << r.losses.front() << " -> " << r.losses.back();
  std::cout << "\n" << r.audit().summary();
  if (!r.audit().ok()) throw ContractError(r.phase + ": frozen weight group changed");
}

template <typename Scalar>
struct Commands {
  const Options& o;
  Logger log = [this](const std::string& m) {
    if (!o.quiet) log_line(m);
  };

  int pretrain() {
    const RunConfig c = load_config(o);
    const Workspace ws = load_workspace(c);
    Model<Scalar> m = init_model<Scalar>(c, ws.tokenizer.vocab_size());
    const TrainReport r = run_pretrain(m, ws, c, log);
    save_model(m, c);
    write_report(c, "pretrain", r.to_json());
    print_audit(r);
    return kOk;
  }

  int train_expert(const std::string& lang_name) {
    const RunConfig c = load_config(o);
    const Lang lang = require_lang(lang_name);
    const Workspace ws = load_workspace(c);
    Model<Scalar> m = load_model<Scalar>(c, o.force);
    const TrainReport r = run_train_expert(m, lang, ws, c, log);
    save_model(m, c);
    write_report(c, "train-expert-" + std::string(xlate::lang_name(lang)), r.to_json());
    print_audit(r);
    return kOk;
  }

  int train_gate() {
    const RunConfig c = load_config(o);
    const Workspace ws = load_workspace(c);
    Model<Scalar> m = load_model<Scalar>(c, o.force);
    const TrainReport r = run_train_gate(m, ws, c, log);
    save_model(m, c);
    write_report(c, "train-gate", r.to_json());
    print_audit(r);
    return kOk;
  }

  int evaluate(const std::string& suite, bool generic, bool baseline, int expert) {
    const RunConfig c = load_config(o);
    const Workspace ws = load_workspace(c);
    Model<Scalar> m = load_model<Scalar>(c, o.force);
    const TagMode tag = generic ? TagMode::generic : TagMode::language;
    if (suite == "routing") {
      const ConfusionMatrix cm = evaluate_routing(m, ws.corpus.test, ws.tokenizer, tag);
      std::cout << cm.table();
      write_report(c, std::string("evaluate-routing") + (generic ? "-generic" : ""), cm.to_json());
    } else {
      if (baseline) {
        for (std::size_t e = 0; e < m.experts.size(); ++e) m.experts[e] = init_expert<Scalar>(m.config(), c.lora, m.experts[e].tag, e);
      }
      const std::optional<int> forced = expert >= 0 ? std::optional<int>(expert) : std::nullopt;
      const TranslationEval ev = evaluate_translation(m, ws.corpus.test, ws.tokenizer, tag, forced);
      const std::string label = baseline ? "fresh-expert baseline"
                                : forced ? "expert " + m.experts.at(static_cast<std::size_t>(expert)).tag
                                         : std::string("gate-routed model");
      std::cout << ev.table(label);
      write_report(c,
                   std::string("evaluate-codebleu") + (baseline ? "-baseline" : "") + (forced ? "-expert" + std::to_string(expert) : "") +
                       (generic ? "-generic" : ""),
                   ev.to_json());
    }
    return kOk;
  }

  int translate(const std::string& in, const std::string& lang_name, bool generic, int expert) {
    const RunConfig c = load_config(o);
    if (!std::filesystem::exists(in)) throw DataError("input file not found: " + in);
    if (!generic && lang_name.empty()) throw ConfigError("--lang is required unless --generic-tag is given");
    const Lang lang = lang_name.empty() ? Lang::cpp : require_lang(lang_name);
    const Workspace ws = load_workspace(c);
    const Model<Scalar> m = load_model<Scalar>(c, o.force);
    const std::string source = collapse_whitespace(read_text(in));
    const Translation t = xlate::translate(m, ws.tokenizer, lang, source, generic ? TagMode::generic : TagMode::language,
                                    expert >= 0 ? std::optional<int>(expert) : std::nullopt);
    std::cout << "# expert " << (t.expert >= 0 ? m.experts[static_cast<std::size_t>(t.expert)].tag : std::string("none"));
    if (!t.gate_probs.empty()) std::cout << " p=" << t.expert_probability;
    std::cout << "\n";
    try {
      std::cout << detokenize_python(t.python);
    } catch (const std::exception&) {
      std::cout << t.python << "\n";
      std::cerr << "warning: output is not well-formed toy Python\n";
    }
    return kOk;
  }
};

int corpus_cmd(const Options& o, std::optional<std::uint64_t> seed, std::optional<int> size, const std::string& out) {
  RunConfig c = load_config(o);
  if (seed) c.seed = *seed;
  if (size) c.corpus.programs_per_language = *size;
  if (!out.empty()) c.output_dir = out;
  c.validate();
  const Workspace ws = prepare_workspace(c, o.quiet ? Logger{} : Logger{log_line});
  std::cout << manifest_table(make_manifest(ws.corpus, c.seed));
  return kOk;
}

int preprocess_cmd(const std::string& in, const std::string& out, bool xlcost, const std::string& xl_lang,
                   const std::string& src_file, const std::string& py_file, int context_len) {
  std::filesystem::create_directories(out);
  if (xlcost) {
    const Lang lang = require_lang(xl_lang);
    const auto records = ingest_xlcost(src_file, py_file, lang);
    write_jsonl(std::filesystem::path(out) / (std::string(lang_name(lang)) + ".jsonl"), records);
    std::cout << records.size() << " pairs written\n";
    return kOk;
  }
  const ToyCorpus corpus = read_corpus(std::filesystem::path(in) / "corpus");
  const Tokenizer tok = Tokenizer::load(std::filesystem::path(in) / "tokenizer.json");
  SampleOptions opts;
  opts.context_len = context_len;
  nlohmann::json stats = nlohmann::json::object();
  std::printf("%-12s %9s %9s %9s %9s %9s\n", "language", "snippets", "programs", "kept", "dropped", "pad_len");
  for (Lang l : kSourceLangs) {
    const auto& programs = corpus.train[static_cast<std::size_t>(l)];
    const auto stages = curriculum_data(programs, tok, opts);
    nlohmann::json lang_stats = nlohmann::json::object();
    for (const auto& st : stages) {
      const PaddedBatch b = pad_batch(st.samples, tok.pad_id());
      std::vector<nlohmann::json> rows;
      for (std::size_t i : b.selection.kept) {
        rows.push_back({{"ids", st.samples[i].ids}, {"prompt_length", st.samples[i].prompt_length}});
      }
      write_jsonl(std::filesystem::path(out) / (std::string(lang_name(l)) + "." + st.name + ".jsonl"), rows);
      lang_stats[st.name] = {{"samples", st.samples.size()},
                             {"kept", b.selection.kept.size()},
                             {"dropped", b.selection.dropped.size()},
                             {"padded_length", b.selection.padded_length}};
    }
    stats[lang_name(l)] = lang_stats;
    const auto& sn = lang_stats["snippet"];
    const auto& pr = lang_stats["program"];
    std::printf("%-12s %9zu %9zu %9zu %9zu %9zu\n", std::string(lang_display(l)).c_str(), sn["samples"].get<std::size_t>(),
                pr["samples"].get<std::size_t>(), sn["kept"].get<std::size_t>() + pr["kept"].get<std::size_t>(),
                sn["dropped"].get<std::size_t>() + pr["dropped"].get<std::size_t>(), pr["padded_length"].get<std::size_t>());
  }
  const auto moe = build_moe_dataset(corpus.train);
  stats["moe_samples"] = moe.size();
  std::printf("MoE set: %zu samples\n", moe.size());
  write_text_atomic(std::filesystem::path(out) / "preprocess.json", stats.dump(2) + "\n");
  return kOk;
}

template <typename Scalar>
int run_all(const Options& o) {
  const RunConfig c = load_config(o);
  Commands<Scalar> cmd{o};
  const PipelineRun<Scalar> run = run_pipeline<Scalar>(c, cmd.log);
  for (const auto& p : run.phases) print_audit(p.report);
  const EvaluationSummary ev = evaluate_all(run.model, run.workspace, c);
  write_report(c, "evaluation", ev.to_json());
  std::cout << "routing with language tags\n" << ev.routing.table();
  std::cout << "routing with <code> tags\n" << ev.routing_generic.table();
  std::cout << ev.routed.table("gate-routed model");
  for (std::size_t e = 0; e < ev.per_expert.size(); ++e) std::cout << ev.per_expert[e].table("expert " + run.model.experts[e].tag);
  std::cout << ev.baseline.table("fresh-expert baseline");
  return kOk;
}

void emit_error(const char* kind, const std::string& what, int code, bool json) {
  if (json) {
    std::cerr << nlohmann::json{{"error", kind}, {"message", what}, {"exit_code", code}}.dump() << "\n";
  } else {
    std::cerr << "error: " << what << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  xlate::retain_freed_memory();
  CLI::App app{"Toy code translation with per-language LoRA experts and a routing gate"};
  app.require_subcommand(1);
  Options o;
  bool error_json = false;
  app.add_option("--config", o.config_path, "Run configuration (JSON)");
  app.add_option("--run-dir", o.run_dir, "Override the run directory");
  app.add_flag("--force", o.force, "Accept a checkpoint written under a different config");
  app.add_flag("--quiet", o.quiet, "No progress log");
  app.add_flag("--error-json", error_json, "Report errors as JSON on stderr");

  std::optional<std::uint64_t> seed;
  std::optional<int> size;
  std::string out;
  auto* corpus = app.add_subcommand("corpus", "Generate the toy corpora, manifest and tokenizer");
  corpus->add_option("--seed", seed);
  corpus->add_option("--size", size, "Training programs per language");
  corpus->add_option("--out", out, "Output directory");

  std::string pp_in, pp_out, xl_lang, xl_src, xl_py;
  bool xlcost = false;
  int context_len = ModelConfig::desk(0).context_len;
  auto* preprocess = app.add_subcommand("preprocess", "Tagging, curriculum split and padding statistics");
  preprocess->add_option("--in", pp_in, "Run directory with corpus/ and tokenizer.json");
  preprocess->add_option("--out", pp_out, "Output directory")->required();
  preprocess->add_flag("--xlcost", xlcost, "Ingest line-aligned source/Python files instead");
  preprocess->add_option("--lang", xl_lang);
  preprocess->add_option("--src", xl_src);
  preprocess->add_option("--py", xl_py);
  preprocess->add_option("--context", context_len);

  auto* pretrain = app.add_subcommand("pretrain", "Pretrain the backbone on toy Python and source programs");
  std::string lang;
  auto* train_expert = app.add_subcommand("train-expert", "Fine-tune one language expert");
  train_expert->add_option("--lang", lang)->required();
  auto* train_gate = app.add_subcommand("train-gate", "Train the routing gate");

  std::string suite = "codebleu";
  int expert = -1;
  bool generic = false, baseline = false;
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate on the held-out set");
  evaluate->add_option("--suite", suite)->check(CLI::IsMember({"codebleu", "routing"}));
  evaluate->add_flag("--generic-tag", generic, "Replace language tags with <code>");
  evaluate->add_flag("--baseline", baseline, "Use fresh experts (codebleu suite)");
  evaluate->add_option("--expert", expert, "Force an expert slot (codebleu suite)");

  std::string in;
  auto* translate = app.add_subcommand("translate", "Translate one source program to toy Python");
  translate->add_option("--in", in)->required();
  translate->add_option("--lang", lang);
  translate->add_flag("--generic-tag", generic);
  translate->add_option("--expert", expert, "Force an expert slot instead of routing");

  auto* run = app.add_subcommand("run", "All phases end to end");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    auto with_precision = [&](auto&& fn) {
      const RunConfig c = load_config(o);
      if (c.precision == Precision::float64) return fn(Commands<double>{o});
      return fn(Commands<float>{o});
    };
    if (*corpus) return corpus_cmd(o, seed, size, out);
    if (*preprocess) {
      if (!xlcost && pp_in.empty()) throw ConfigError("--in is required");
      return preprocess_cmd(pp_in, pp_out, xlcost, xl_lang, xl_src, xl_py, context_len);
    }
    if (*pretrain) return with_precision([](auto c) { return c.pretrain(); });
    if (*train_expert) return with_precision([&](auto c) { return c.train_expert(lang); });
    if (*train_gate) return with_precision([](auto c) { return c.train_gate(); });
    if (*evaluate) return with_precision([&](auto c) { return c.evaluate(suite, generic, baseline, expert); });
    if (*translate) return with_precision([&](auto c) { return c.translate(in, lang, generic, expert); });
    if (*run) return load_config(o).precision == Precision::float64 ? run_all<double>(o) : run_all<float>(o);
  } catch (const ConfigError& e) {
    emit_error("config", e.what(), kConfig, error_json);
    return kConfig;
  } catch (const NumericError& e) {
    emit_error("numeric", e.what(), kNumeric, error_json);
    return kNumeric;
  } catch (const DataError& e) {
    emit_error("data", e.what(), kData, error_json);
    return kData;
  } catch (const ContextError& e) {
    emit_error("data", e.what(), kData, error_json);
    return kData;
  } catch (const toy::ParseError& e) {
    emit_error("data", e.what(), kData, error_json);
    return kData;
  } catch (const std::exception& e) {
    emit_error("internal", e.what(), kFailure, error_json);
    return kFailure;
  }
  return kOk;
}
