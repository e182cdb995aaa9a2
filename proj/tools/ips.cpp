// Command-line front end: data generation, training, policy-gradient
// fine-tuning, parsing, evaluation, analysis, and gradient verification.
// Options resolve as command line > config file ([section] per subcommand,
// key=value) > built-in default; every run logs the resolved configuration.
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ips/corpus.hpp"
#include "ips/decode.hpp"
#include "ips/eval.hpp"
#include "ips/gradcheck.hpp"
#include "ips/model.hpp"
#include "ips/train.hpp"
#include "ips/transition.hpp"

namespace {

void log_resolved_config(const CLI::App& app) {
  std::ostringstream os;
  os << app.config_to_str(true, false);
  std::cerr << "[resolved-config]\n" << os.str() << "[/resolved-config]\n";
}

std::vector<std::pair<std::string, std::string>> parse_task_specs(
    const std::vector<std::string>& specs) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const std::string& s : specs) {
    std::size_t eq = s.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == s.size())
      throw ips::usage_error("--task expects NAME=PATH, got '" + s + "'");
    out.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  return out;
}

// Labeled micro-F1 of a model against its own training corpus.
double self_f1(const ips::Corpus& corpus, ips::ModelParams& params, const std::string& task,
               const ips::DecodeOptions& opt) {
  ips::Corpus predicted;
  predicted.reserve(corpus.size());
  ips::TaskParams& tp = params.task(task);
  for (const auto& [sent, gold] : corpus)
    predicted.emplace_back(sent, ips::parse_sentence(sent, params, tp, opt).graph);
  return ips::micro_f1(corpus, predicted, true).f1;
}

struct GenOptions {
  ips::GenConfig gen;
  std::string out;
};

struct TrainOptions {
  std::vector<std::string> task_specs;
  std::string out;
  std::string pretrained;
  ips::TrainConfig train;
  double scale = 1.0;
  bool no_lemma = false;
  double target_f1 = 0.0;
  std::size_t eval_every = 0;
};

struct RlOptions {
  std::string checkpoint, task, data, out;
  ips::TrainConfig train;
};

struct ParseOptions {
  std::string checkpoint, task, data, out, derivations;
  bool no_repair = false;
  std::size_t max_rounds = 0;
};

struct EvalOptions {
  std::string gold, pred, json_path, csv_path;
  bool no_root = false;
  bool cycles = false;
};

struct AnalyzeOptions {
  std::string derivations, ref_trees;
  std::string hist_csv, hist_json, align_csv, align_json;
  std::size_t min_heads = 4;
};

struct GradCheckOptions {
  double scale = 0.05;
  std::uint64_t seed = 1;
  std::size_t max_coords = 4;
  double threshold = 1e-4;
};

void run_gen(const GenOptions& o) {
  ips::Corpus corpus = ips::gen_synthetic(o.gen);
  ips::write_sdp(corpus, o.out);
  std::cout << "wrote " << corpus.size() << " sentences to " << o.out << "\n";
}

void run_train(const TrainOptions& o) {
  auto specs = parse_task_specs(o.task_specs);
  if (specs.empty()) throw ips::usage_error("train: at least one --task NAME=PATH required");

  std::vector<std::pair<std::string, ips::Corpus>> corpora;
  ips::Corpus all;
  for (const auto& [name, path] : specs) {
    corpora.emplace_back(name, ips::read_sdp(path));
    for (const auto& entry : corpora.back().second) all.push_back(entry);
  }

  ips::PretrainedVectors vectors;
  const ips::PretrainedVectors* pre = nullptr;
  ips::ModelDims dims = ips::ModelDims{}.scaled(o.scale);
  dims.use_lemma = !o.no_lemma;
  if (!o.pretrained.empty()) {
    vectors = ips::load_pretrained(o.pretrained, dims.embed);
    pre = &vectors;
  }

  std::vector<std::pair<std::string, ips::StringMap>> task_labels;
  for (const auto& [name, corpus] : corpora)
    task_labels.emplace_back(name, ips::collect_labels(corpus));

  ips::ModelParams params =
      ips::init_model(dims, ips::build_vocab(all, pre), task_labels, o.train.seed, pre);

  ips::EpochHook hook = [&](const ips::EpochStats& s) {
    nlohmann::json j{{"epoch", s.epoch},
                     {"transition_loss", s.transition_loss},
                     {"label_loss", s.label_loss}};
    if (o.target_f1 > 0.0 && o.eval_every > 0 && s.epoch % o.eval_every == 0) {
      bool all_reached = true;
      std::vector<double> f1s;
      for (auto& [name, corpus] : corpora) {
        double f1 = self_f1(corpus, params, name, ips::DecodeOptions{});
        f1s.push_back(f1);
        if (f1 < o.target_f1) all_reached = false;
      }
      j["train_f1"] = f1s;
      std::cerr << j.dump() << "\n";
      return !all_reached;
    }
    std::cerr << j.dump() << "\n";
    return true;
  };

  ips::multitask_train(corpora, params, o.train, hook);
  ips::save_model(params, o.out);
  std::cout << "saved checkpoint " << o.out << "\n";
}

void run_finetune(const RlOptions& o) {
  ips::ModelParams params = ips::load_model(o.checkpoint);
  ips::Corpus corpus = ips::read_sdp(o.data);
  ips::TaskParams& task = params.task(o.task);

  double pre = ips::eval_mean_reward(corpus, params, task, o.train, o.train.seed + 1000);
  std::cout << "pre_mean_reward=" << pre << "\n";

  ips::EpochHook hook = [&](const ips::EpochStats& s) {
    std::cout << "epoch=" << s.epoch << " mean_reward=" << s.mean_reward << "\n";
    return true;
  };
  ips::finetune_rl(corpus, params, o.task, o.train, hook);

  double post = ips::eval_mean_reward(corpus, params, task, o.train, o.train.seed + 1000);
  std::cout << "post_mean_reward=" << post << "\n";
  ips::save_model(params, o.out);
  std::cout << "saved checkpoint " << o.out << "\n";
}

void run_parse(const ParseOptions& o) {
  ips::ModelParams params = ips::load_model(o.checkpoint);
  ips::Corpus corpus = ips::read_sdp(o.data);
  ips::TaskParams& task = params.task(o.task);

  ips::DecodeOptions opt;
  opt.repair = !o.no_repair;
  opt.max_rounds = o.max_rounds;

  ips::Corpus predicted;
  std::vector<std::pair<std::string, ips::Derivation>> derivations;
  std::size_t capped = 0;
  for (const auto& [sent, gold] : corpus) {
    ips::DecodeResult res = ips::parse_sentence(sent, params, task, opt);
    if (res.derivation.hit_round_cap) {
      ++capped;
      std::cerr << "warning: sentence '" << sent.id << "' hit the round cap\n";
    }
    if (!o.derivations.empty()) derivations.emplace_back(sent.id, res.derivation);
    predicted.emplace_back(sent, std::move(res.graph));
  }
  ips::write_sdp(predicted, o.out);
  if (!o.derivations.empty()) ips::write_derivations(derivations, o.derivations);
  std::cout << "parsed " << predicted.size() << " sentences";
  if (capped) std::cout << " (" << capped << " hit the round cap)";
  std::cout << "\n";
}

void run_eval(const EvalOptions& o) {
  ips::Corpus gold = ips::read_sdp(o.gold);
  ips::Corpus pred = ips::read_sdp(o.pred);
  bool include_root = !o.no_root;

  ips::F1Result lab = ips::micro_f1(gold, pred, true, include_root);
  ips::F1Result unl = ips::micro_f1(gold, pred, false, include_root);
  std::cout << "labeled_precision=" << lab.precision << "\n"
            << "labeled_recall=" << lab.recall << "\n"
            << "labeled_f1=" << lab.f1 << "\n"
            << "unlabeled_precision=" << unl.precision << "\n"
            << "unlabeled_recall=" << unl.recall << "\n"
            << "unlabeled_f1=" << unl.f1 << "\n";

  ips::Report report = ips::f1_report(lab, "labeled");
  ips::Report unl_report = ips::f1_report(unl, "unlabeled");
  for (const auto& row : unl_report.rows) report.rows.push_back(row);

  if (o.cycles) {
    ips::CycleStats cs = ips::cycle_stats(pred);
    std::cout << "cyclic_graphs=" << cs.cyclic << "\n"
              << "cyclic_total=" << cs.total << "\n"
              << "cyclic_percentage=" << cs.percentage << "\n";
    report.rows.push_back({"cyclic_graphs", std::to_string(cs.cyclic)});
    report.rows.push_back({"cyclic_total", std::to_string(cs.total)});
    report.rows.push_back({"cyclic_percentage", ips::format_number(cs.percentage)});
  }
  if (!o.json_path.empty()) ips::write_json(report, o.json_path);
  if (!o.csv_path.empty()) ips::write_csv(report, o.csv_path);
}

void run_analyze(const AnalyzeOptions& o) {
  auto named = ips::read_derivations(o.derivations);
  std::vector<ips::Derivation> derivations;
  derivations.reserve(named.size());
  for (auto& [id, d] : named) derivations.push_back(std::move(d));

  ips::ArcLengthHistogram hist = ips::arc_length_histogram(derivations);
  ips::Report hist_rep = ips::histogram_report(hist);
  if (!o.hist_csv.empty()) ips::write_csv(hist_rep, o.hist_csv);
  if (!o.hist_json.empty()) ips::write_json(hist_rep, o.hist_json);
  for (std::size_t s = 0; s < ips::ArcLengthHistogram::kSteps; ++s)
    std::cout << "step" << ips::ArcLengthHistogram::step_name(s)
              << "_arcs=" << hist.step_total(s) << "\n";

  if (!o.ref_trees.empty()) {
    std::vector<ips::RefTree> trees = ips::read_ref_trees(o.ref_trees);
    ips::AlignmentResult align = ips::syntactic_alignment(derivations, trees, o.min_heads);
    ips::Report align_rep = ips::alignment_report(align);
    if (!o.align_csv.empty()) ips::write_csv(align_rep, o.align_csv);
    if (!o.align_json.empty()) ips::write_json(align_rep, o.align_json);
    std::cout << "alignment_matched=" << align.matched << "\n"
              << "alignment_unmatched=" << align.unmatched << "\n"
              << "alignment_total=" << align.total << "\n";
  }
}

void run_grad_check(const GradCheckOptions& o) {
  std::vector<ips::GradCheckCase> cases = ips::grad_check_suite(o.scale, o.seed, o.max_coords);
  for (const ips::GradCheckCase& c : cases)
    std::cout << "case=" << c.name << " max_rel_error=" << c.report.max_rel_error
              << " coords=" << c.report.coords_checked << "\n";
  double mx = ips::suite_max_rel_error(cases);
  std::cout << "max_rel_error=" << mx << "\n";
  if (!(mx < o.threshold))
    throw ips::numeric_error("gradient check failed: max relative error " + std::to_string(mx) +
                             " >= " + std::to_string(o.threshold));
  std::cout << "grad-check passed (threshold " << o.threshold << ")\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Iterative head-selection parser for semantic dependency graphs"};
  app.require_subcommand(1);
  app.set_config("--config")
      ->envname("IPS_CONFIG")
      ->description("INI config file; one [section] per subcommand");

  GenOptions gen_o;
  CLI::App* gen = app.add_subcommand("gen-data", "Generate a synthetic corpus");
  gen->add_option("--out", gen_o.out, "Output corpus path")->required();
  gen->add_option("--size", gen_o.gen.size, "Number of sentences")->capture_default_str();
  gen->add_option("--seed", gen_o.gen.seed, "Generator seed")->capture_default_str();
  gen->add_option("--grammar-scale", gen_o.gen.grammar_scale, "Lexicon size factor")
      ->capture_default_str();
  gen->add_option("--multi-head-rate", gen_o.gen.multi_head_rate,
                  "Probability of the multi-head template")
      ->capture_default_str();
  gen->add_option("--hard-arc-rate", gen_o.gen.hard_arc_rate,
                  "Probability of the hash-determined long arc")
      ->capture_default_str();
  gen->add_option("--id-prefix", gen_o.gen.id_prefix, "Sentence id prefix")->capture_default_str();
  gen->add_option("--root-label", gen_o.gen.root_label, "Label for root attachments")
      ->capture_default_str();
  gen->callback([&] {
    log_resolved_config(app);
    run_gen(gen_o);
  });

  TrainOptions train_o;
  CLI::App* train = app.add_subcommand("train", "Supervised (multi-task) training");
  train->add_option("--task", train_o.task_specs, "Task as NAME=PATH (repeatable)")
      ->required()
      ->take_all();
  train->add_option("--out", train_o.out, "Checkpoint output path")->required();
  train->add_option("--epochs", train_o.train.epochs, "Training epochs")->capture_default_str();
  train->add_option("--lr", train_o.train.lr, "Optimizer step size")->capture_default_str();
  train->add_option("--dropout", train_o.train.dropout, "Dropout rate on MLP hidden layers")
      ->capture_default_str();
  train->add_option("--seed", train_o.train.seed, "Training seed")->capture_default_str();
  train->add_option("--scale", train_o.scale, "Model size profile (1.0 = full)")
      ->capture_default_str();
  train->add_flag("--no-lemma", train_o.no_lemma, "Ablate lemma embeddings");
  train->add_option("--pretrained", train_o.pretrained, "Pretrained word vectors (text format)");
  train->add_option("--target-f1", train_o.target_f1,
                    "Stop when labeled train F1 reaches this value (0 = off)")
      ->capture_default_str();
  train->add_option("--eval-every", train_o.eval_every,
                    "Evaluate train F1 every N epochs (0 = never)")
      ->capture_default_str();
  train->callback([&] {
    log_resolved_config(app);
    train_o.train.scale = train_o.scale;
    run_train(train_o);
  });

  RlOptions rl_o;
  CLI::App* rl = app.add_subcommand("finetune-rl", "Policy-gradient fine-tuning");
  rl->add_option("--checkpoint", rl_o.checkpoint, "Input checkpoint")->required();
  rl->add_option("--task", rl_o.task, "Task to fine-tune")->required();
  rl->add_option("--data", rl_o.data, "Fine-tuning corpus")->required();
  rl->add_option("--out", rl_o.out, "Checkpoint output path")->required();
  rl->add_option("--rl-epochs", rl_o.train.rl_epochs, "Fine-tuning epochs")
      ->capture_default_str();
  rl->add_option("--rl-lr", rl_o.train.rl_lr, "Fine-tuning step size")->capture_default_str();
  rl->add_option("--seed", rl_o.train.seed, "Sampling seed")->capture_default_str();
  rl->add_option("--dropout", rl_o.train.dropout, "Dropout rate during episodes")
      ->capture_default_str();
  rl->add_option("--max-transitions", rl_o.train.rl_max_transitions,
                 "Per-episode transition cap")
      ->capture_default_str();
  rl->callback([&] {
    log_resolved_config(app);
    run_finetune(rl_o);
  });

  ParseOptions parse_o;
  CLI::App* parse = app.add_subcommand("parse", "Decode a corpus with a trained model");
  parse->add_option("--checkpoint", parse_o.checkpoint, "Model checkpoint")->required();
  parse->add_option("--task", parse_o.task, "Task head to decode with")->required();
  parse->add_option("--data", parse_o.data, "Input corpus (arcs ignored)")->required();
  parse->add_option("--out", parse_o.out, "Predicted corpus output path")->required();
  parse->add_option("--derivations", parse_o.derivations,
                    "Also write per-sentence derivations (JSON lines)");
  parse->add_flag("--no-repair", parse_o.no_repair, "Disable cycle repair");
  parse->add_option("--max-rounds", parse_o.max_rounds, "Round cap (0 = max(2n, 20))")
      ->capture_default_str();
  parse->callback([&] {
    log_resolved_config(app);
    run_parse(parse_o);
  });

  EvalOptions eval_o;
  CLI::App* eval = app.add_subcommand("eval", "Micro-averaged F1 and cycle statistics");
  eval->add_option("--gold", eval_o.gold, "Gold corpus")->required();
  eval->add_option("--pred", eval_o.pred, "Predicted corpus")->required();
  eval->add_flag("--no-root", eval_o.no_root, "Exclude arcs to the virtual root");
  eval->add_flag("--cycles", eval_o.cycles, "Also report cycle statistics");
  eval->add_option("--json", eval_o.json_path, "Write the report as JSON");
  eval->add_option("--csv", eval_o.csv_path, "Write the report as CSV");
  eval->callback([&] {
    log_resolved_config(app);
    run_eval(eval_o);
  });

  AnalyzeOptions an_o;
  CLI::App* an = app.add_subcommand("analyze", "Arc-order histograms and tree alignment");
  an->add_option("--derivations", an_o.derivations, "Derivations written by parse")->required();
  an->add_option("--hist-csv", an_o.hist_csv, "Arc-length histogram CSV output");
  an->add_option("--hist-json", an_o.hist_json, "Arc-length histogram JSON output");
  an->add_option("--ref-trees", an_o.ref_trees, "Reference trees (index<TAB>head blocks)");
  an->add_option("--align-csv", an_o.align_csv, "Alignment CSV output");
  an->add_option("--align-json", an_o.align_json, "Alignment JSON output");
  an->add_option("--min-heads", an_o.min_heads, "Head-count filter for per-step alignment")
      ->capture_default_str();
  an->callback([&] {
    log_resolved_config(app);
    run_analyze(an_o);
  });

  GradCheckOptions gc_o;
  CLI::App* gc = app.add_subcommand("grad-check", "Verify gradients by finite differences");
  gc->add_option("--scale", gc_o.scale, "Model size profile")->capture_default_str();
  gc->add_option("--seed", gc_o.seed, "Fixture seed")->capture_default_str();
  gc->add_option("--max-coords", gc_o.max_coords, "Probed coordinates per model tensor")
      ->capture_default_str();
  gc->add_option("--threshold", gc_o.threshold, "Maximum allowed relative error")
      ->capture_default_str();
  gc->callback([&] {
    log_resolved_config(app);
    run_grad_check(gc_o);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const ips::usage_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ips::data_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ips::numeric_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const ips::error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
