#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "excord/data_model.hpp"
#include "excord/errors.hpp"
#include "excord/metrics.hpp"
#include "excord/rewriter.hpp"
#include "excord/synthetic.hpp"
#include "excord/trainer.hpp"
#include "json.hpp"

namespace excord::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string read_text(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path.string() + ": cannot open file");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw Error(path.string() + ": cannot open for writing");
    out << text;
}

void add_decoding_flags(CLI::App* app, DecodingConfig& decoding) {
    app->add_option("--beam-size", decoding.beam_size, "Rewriter beam size")->capture_default_str();
    app->add_option("--top-k", decoding.top_k, "Rewriter top-k sampling cutoff")->capture_default_str();
    app->add_option("--decode-temperature", decoding.temperature, "Rewriter sampling temperature")
        ->capture_default_str();
    app->add_option("--max-output-tokens", decoding.max_output_tokens, "Rewriter output length cap")
        ->capture_default_str();
}

struct RewriterFlags {
    std::string rules;
    std::string model;

    void add(CLI::App* app) {
        app->add_option("--rules", rules, "Rule table JSON for the rule rewriter (default: pronoun resolver)");
        app->add_option("--rewriter-model", model, "Trained substitution rewriter model JSON");
    }

    std::unique_ptr<RewriterBackend> make() const {
        if (!rules.empty() && !model.empty()) throw ConfigError("--rules and --rewriter-model are mutually exclusive");
        if (!model.empty()) return std::make_unique<SubstitutionRewriter>(SubstitutionRewriter::load(model));
        if (!rules.empty()) return std::make_unique<RuleRewriter>(RuleRewriter::from_json_file(rules));
        return std::make_unique<RuleRewriter>(RuleRewriter::pronoun_resolver());
    }
};

// ---- prepare -------------------------------------------------------------------

struct PrepareArgs {
    std::vector<std::string> quac;
    std::vector<std::string> canard;
    std::vector<std::string> coqa;
    std::string input_dir;
    std::size_t synthetic = 0;
    std::string out;
    double dev_fraction = 0.0;
    std::uint64_t seed = 42;
    RewriterFlags rewriter;
    DecodingConfig decoding;
};

void collect_input_dir(PrepareArgs& args) {
    if (args.input_dir.empty()) return;
    if (!fs::is_directory(args.input_dir)) throw ValidationError(args.input_dir + ": not a directory");
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(args.input_dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::size_t used = 0;
    for (const fs::path& file : files) {
        const std::string name = file.filename().string();
        if (name.rfind("quac", 0) == 0) args.quac.push_back(file.string());
        else if (name.rfind("canard", 0) == 0) args.canard.push_back(file.string());
        else if (name.rfind("coqa", 0) == 0) args.coqa.push_back(file.string());
        else continue;
        ++used;
    }
    if (used == 0) throw ValidationError(args.input_dir + ": no quac*.json, canard*.json or coqa*.json inputs");
}

int run_prepare(PrepareArgs args, std::ostream& out) {
    collect_input_dir(args);
    if (args.quac.empty() && args.coqa.empty() && args.synthetic == 0) {
        throw ConfigError("nothing to prepare: pass --quac, --coqa, --input-dir or --synthetic");
    }
    if (!args.canard.empty() && args.quac.empty() && args.synthetic == 0) {
        throw ConfigError("--canard rewrites refer to QuAC dialogues; pass --quac as well");
    }

    std::vector<Dialogue> dialogues;
    std::vector<RewriteRecord> records;
    for (const auto& path : args.quac) {
        auto loaded = load_quac_like(path);
        dialogues.insert(dialogues.end(), loaded.begin(), loaded.end());
    }
    for (const auto& path : args.coqa) {
        auto loaded = load_coqa_like(path);
        dialogues.insert(dialogues.end(), loaded.begin(), loaded.end());
    }
    for (const auto& path : args.canard) {
        auto loaded = load_canard(path);
        records.insert(records.end(), loaded.begin(), loaded.end());
    }
    if (args.synthetic > 0) {
        const SyntheticCorpus corpus = make_synthetic_corpus({args.synthetic, args.seed, 0.5});
        dialogues.insert(dialogues.end(), corpus.dialogues.begin(), corpus.dialogues.end());
        records.insert(records.end(), corpus.rewrites.begin(), corpus.rewrites.end());
    }
    std::set<std::string> ids;
    for (const Dialogue& d : dialogues) {
        if (!ids.insert(d.id).second) throw ValidationError("duplicate dialogue id '" + d.id + "' across inputs");
    }
    std::size_t matched = 0;
    for (const RewriteRecord& r : records) {
        if (ids.count(r.dialogue_id) == 0) {
            spdlog::warn("rewrite record ({}, {}) matches no loaded dialogue", r.dialogue_id, r.turn_index);
        } else {
            ++matched;
        }
    }

    const auto backend = args.rewriter.make();
    args.decoding.seed = args.seed;
    RewriteCache cache;
    const PairingResult pairing = build_pairs(dialogues, records, make_pairing_rewriter(*backend, args.decoding, &cache));

    std::optional<std::pair<std::vector<Dialogue>, std::vector<Dialogue>>> split;
    if (args.dev_fraction > 0.0) split = split_dev(dialogues, args.dev_fraction, args.seed);

    // Everything is computed; only now touch the output directory.
    const fs::path dir(args.out);
    fs::create_directories(dir);
    write_dialogues_jsonl(dir / "dialogues.jsonl", dialogues);
    if (split) {
        write_dialogues_jsonl(dir / "train.jsonl", split->first);
        write_dialogues_jsonl(dir / "dev.jsonl", split->second);
    }
    write_pairs_jsonl(dir / "pairs.jsonl", pairing.pairs);
    write_text(dir / "rewrite_records.json", to_canard_json(records) + "\n");
    const std::string hash = rewrite_config_hash(*backend, args.decoding);
    {
        std::ofstream cache_out(dir / "rewrite_cache.jsonl");
        std::set<std::pair<std::string, int>> failed;
        for (const auto& e : pairing.errors) failed.emplace(e.dialogue_id, e.turn_index);
        for (const QuestionPair& p : pairing.pairs) {
            if (p.provenance != Provenance::synthetic || failed.count({p.dialogue_id, p.turn_index})) continue;
            cache_out << json{{"dialogue_id", p.dialogue_id},
                              {"turn_index", p.turn_index},
                              {"original", p.original},
                              {"rewrite", p.self_contained},
                              {"config_hash", hash}}
                             .dump()
                      << '\n';
        }
    }
    std::size_t turns = 0;
    for (const Dialogue& d : dialogues) turns += d.turns.size();
    json errors = json::array();
    for (const auto& e : pairing.errors) {
        errors.push_back({{"dialogue_id", e.dialogue_id}, {"turn_index", e.turn_index}, {"message", e.message}});
    }
    const json manifest = {{"dialogues", dialogues.size()},
                           {"turns", turns},
                           {"pairs", pairing.pairs.size()},
                           {"human_pairs", pairing.human_count},
                           {"synthetic_pairs", pairing.synthetic_count},
                           {"rewrite_records", records.size()},
                           {"rewrite_records_matched", matched},
                           {"rewrite_failures", errors},
                           {"rewriter", backend->identity()},
                           {"rewrite_config_hash", hash},
                           {"seed", args.seed},
                           {"train_dialogues", split ? split->first.size() : dialogues.size()},
                           {"dev_dialogues", split ? split->second.size() : 0}};
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");

    out << "dialogues: " << dialogues.size() << "\nturns: " << turns << "\npairs: " << pairing.pairs.size()
        << "\nhuman pairs: " << pairing.human_count << "\nsynthetic pairs: " << pairing.synthetic_count
        << "\nrewrite failures: " << pairing.errors.size() << '\n';
    if (split) out << "train dialogues: " << split->first.size() << "\ndev dialogues: " << split->second.size() << '\n';
    return kExitOk;
}

// ---- rewrite -------------------------------------------------------------------

struct RewriteArgs {
    std::string backend = "rules";
    RewriterFlags rewriter;
    std::string data;
    std::string out;
    std::string question;
    std::vector<std::string> history;
    std::string fit;
    int fit_epochs = 1;
    double fit_lr = 0.5;
    std::string save_model;
    std::uint64_t seed = 42;
    DecodingConfig decoding;
};

int run_rewrite(RewriteArgs args, std::ostream& out) {
    std::unique_ptr<RewriterBackend> backend;
    if (args.backend == "learned") {
        if (!args.rewriter.rules.empty()) throw ConfigError("--rules applies to the rules backend only");
        backend = args.rewriter.model.empty()
                      ? std::make_unique<SubstitutionRewriter>()
                      : std::make_unique<SubstitutionRewriter>(SubstitutionRewriter::load(args.rewriter.model));
    } else {
        if (!args.rewriter.model.empty()) throw ConfigError("--rewriter-model needs --backend learned");
        backend = args.rewriter.make();
    }
    args.decoding.seed = args.seed;
    args.decoding.validate();

    if (!args.fit.empty()) {
        const auto records = load_canard(args.fit);
        const FitReport report = fine_tune_rewriter(*backend, records, {args.fit_epochs, args.fit_lr, 0.2, args.seed});
        out << "fit on " << report.usable_examples << " examples (" << report.skipped_examples
            << " skipped); held-out loss " << report.heldout_loss_before << " -> " << report.heldout_loss_after << '\n';
        if (!args.save_model.empty()) {
            dynamic_cast<SubstitutionRewriter&>(*backend).save(args.save_model);
            out << "saved model to " << args.save_model << '\n';
        }
    } else if (!args.save_model.empty()) {
        throw ConfigError("--save-model needs --fit");
    }

    if (!args.question.empty()) {
        if (args.history.size() % 2 != 0) throw ConfigError("--history takes question/answer pairs");
        ConversationHistory history;
        for (std::size_t i = 0; i + 1 < args.history.size(); i += 2) {
            history.entries.push_back({args.history[i], args.history[i + 1]});
        }
        out << rewrite(args.question, history, *backend, args.decoding) << '\n';
    }

    if (!args.data.empty()) {
        if (args.out.empty()) throw ConfigError("--data needs --out for the rewrite cache");
        const auto dialogues = read_dialogues_jsonl(args.data);
        RewriteCache cache(args.out);
        const std::size_t before = cache.size();
        const PairingResult result = build_pairs(dialogues, {}, make_pairing_rewriter(*backend, args.decoding, &cache));
        out << "rewrote " << result.pairs.size() - result.errors.size() << " questions (" << cache.size() - before
            << " new, " << result.errors.size() << " failed) into " << args.out << '\n';
    }
    if (args.question.empty() && args.data.empty() && args.fit.empty()) {
        throw ConfigError("nothing to do: pass --question, --data or --fit");
    }
    return kExitOk;
}

// ---- train ---------------------------------------------------------------------

struct TrainArgs {
    std::string config;
    std::string data;
    std::string run_dir;
    TrainConfig defaults;
    std::string mode = "excord";
    bool use_hae = false;
};

// Data directory written by `prepare`.
struct PreparedData {
    std::vector<Dialogue> train;
    std::vector<Dialogue> dev;
    std::vector<QuestionPair> pairs;
};

PreparedData load_prepared(const fs::path& dir) {
    PreparedData data;
    if (!fs::is_directory(dir)) throw ValidationError(dir.string() + ": data directory not found");
    data.train = read_dialogues_jsonl(fs::exists(dir / "train.jsonl") ? dir / "train.jsonl" : dir / "dialogues.jsonl");
    if (fs::exists(dir / "dev.jsonl")) data.dev = read_dialogues_jsonl(dir / "dev.jsonl");
    std::set<std::string> ids;
    for (const Dialogue& d : data.train) ids.insert(d.id);
    for (QuestionPair& p : read_pairs_jsonl(dir / "pairs.jsonl")) {
        if (ids.count(p.dialogue_id)) data.pairs.push_back(std::move(p));
    }
    return data;
}

int run_train(const TrainArgs& args, const CLI::App& app, std::ostream& out) {
    json merged = json::object();
    if (!args.config.empty()) {
        try {
            merged = json::parse(read_text(args.config));
        } catch (const json::parse_error& e) {
            throw ConfigError(args.config + ": run config is not valid JSON: " + e.what());
        }
        if (!merged.is_object()) throw ConfigError(args.config + ": run config must be a JSON object");
    }
    const TrainConfig& d = args.defaults;
    auto set_if = [&](const char* flag, const char* key, const auto& value) {
        if (app.count(flag) > 0) merged[key] = value;
    };
    set_if("--mode", "mode", args.mode);
    set_if("--lr", "learning_rate", d.learning_rate);
    set_if("--batch-size", "batch_size", d.batch_size);
    set_if("--eval-interval", "eval_interval_steps", d.eval_interval_steps);
    set_if("--max-steps", "max_steps", d.max_steps);
    set_if("--epochs", "epochs", d.epochs);
    set_if("--lambda1", "lambda1", d.weights.lambda1);
    set_if("--lambda2", "lambda2", d.weights.lambda2);
    set_if("--temperature", "target_temperature", d.weights.target_temperature);
    set_if("--history-window", "history_window_k", d.history_window_k);
    set_if("--seed", "seed", d.seed);
    set_if("--weight-decay", "weight_decay", d.weight_decay);
    set_if("--warmup-fraction", "warmup_fraction", d.warmup_fraction);
    set_if("--max-seq-len", "max_sequence_len", d.limits.max_sequence_len);
    set_if("--max-query-len", "max_query_len", d.limits.max_query_len);
    set_if("--doc-stride", "doc_stride", d.limits.doc_stride);
    set_if("--max-answer-len", "max_answer_len", d.max_answer_len);
    if (app.count("--hae") > 0) merged["backbone"]["use_hae"] = args.use_hae;
    const TrainConfig config = train_config_from_json(merged.dump());

    const PreparedData data = load_prepared(args.data);
    if (data.pairs.empty()) throw ValidationError(args.data + ": no question pairs for the training dialogues");
    TinyBackbone backbone(config.backbone);
    const fs::path run_dir(args.run_dir);
    const TrainResult result = train(config, data.train, data.pairs, data.dev, backbone, {run_dir});
    backbone.save(run_dir / "backbone.json");

    const auto& first = result.log.front().loss;
    const auto& last = result.log.back().loss;
    out << "mode: " << to_string(config.mode) << "\nsteps: " << result.log.size() << "\nstep 1 total loss: " << first.total
        << "\nfinal total loss: " << last.total << " (l_orig " << last.l_orig << ", l_self " << last.l_self
        << ", l_cons " << last.l_cons << ")\nbest step: " << result.best.step << "\nbest dev F1: " << result.best.dev_f1
        << '\n';
    return kExitOk;
}

// ---- predict -------------------------------------------------------------------

struct PredictArgs {
    std::string run_dir;
    std::string backbone;
    std::string config;
    std::string data;
    std::string out;
    std::string mode;
    std::string rewrites;
    RewriterFlags rewriter;
    std::uint64_t seed = 42;
    DecodingConfig decoding;
};

int run_predict(PredictArgs args, std::ostream& out) {
    fs::path backbone_path = args.backbone;
    fs::path config_path = args.config;
    if (!args.run_dir.empty()) {
        if (backbone_path.empty()) backbone_path = fs::path(args.run_dir) / "backbone.json";
        if (config_path.empty()) config_path = fs::path(args.run_dir) / "config.json";
    }
    if (backbone_path.empty()) throw ConfigError("pass --run-dir or --backbone");
    const TrainConfig config = config_path.empty() ? TrainConfig{} : load_train_config(config_path);
    const TinyBackbone backbone = TinyBackbone::load(backbone_path);

    PredictOptions options = predict_options_from(config);
    if (!args.mode.empty()) options.mode = parse_train_mode(args.mode);
    std::optional<RewriteCache> cache;
    std::unique_ptr<RewriterBackend> rewriter;
    if (options.mode == TrainMode::pipeline) {
        if (!args.rewrites.empty()) {
            if (!fs::exists(args.rewrites)) throw ValidationError(args.rewrites + ": rewrite cache not found");
            cache.emplace(args.rewrites);
            options.rewrites = &*cache;
        }
        // Cache misses go to the rewriter.
        rewriter = args.rewriter.make();
        options.rewriter = rewriter.get();
        args.decoding.seed = args.seed;
        options.decoding = args.decoding;
    }

    const auto dialogues = read_dialogues_jsonl(args.data);
    const PredictionResult result = predict(backbone, dialogues, options);
    write_predictions(args.out, result.predictions);
    if (!result.errors.empty()) {
        json errors = json::array();
        for (const auto& e : result.errors) {
            errors.push_back({{"dialogue_id", e.dialogue_id}, {"turn_index", e.turn_index}, {"message", e.message}});
        }
        write_text(args.out + ".errors.json", errors.dump(2) + "\n");
    }
    out << "predicted " << result.predictions.size() << " answers (" << to_string(options.mode) << " mode, "
        << result.errors.size() << " rewrite fallbacks) into " << args.out << '\n';
    return kExitOk;
}

// ---- evaluate / report -----------------------------------------------------------

struct EvaluateArgs {
    std::string predictions;
    std::string gold;
    std::string quac;
    std::string coqa;
    std::string out;
    std::string name = "model";
    bool coqa_domains = false;
};

int run_evaluate(const EvaluateArgs& args, std::ostream& out) {
    std::vector<Dialogue> gold;
    if (!args.gold.empty()) gold = read_dialogues_jsonl(args.gold);
    else if (!args.quac.empty()) gold = load_quac_like(args.quac);
    else if (!args.coqa.empty()) gold = load_coqa_like(args.coqa);
    else throw ConfigError("pass --gold, --quac or --coqa");
    const auto predictions = read_predictions(args.predictions);
    const auto results = score_predictions(predictions, gold);
    const auto domains = args.coqa_domains ? coqa_domains() : std::vector<std::string>{};
    const EvalReport report = aggregate(results, domains);
    if (!args.out.empty()) {
        const fs::path path(args.out);
        if (path.has_parent_path()) fs::create_directories(path.parent_path());
        write_text(path, report_to_json(report) + "\n");
    }
    const std::vector<std::pair<std::string, EvalReport>> rows = {{args.name, report}};
    out << format_report_table(rows);
    for (const auto& [domain, f1] : report.per_domain_f1) {
        char line[128];
        std::snprintf(line, sizeof line, "  %-12s %7.1f\n", domain.c_str(), f1);
        out << line;
    }
    return kExitOk;
}

struct ReportArgs {
    std::vector<std::string> runs;
    std::string out;
};

int run_report(const ReportArgs& args, std::ostream& out) {
    std::vector<std::pair<std::string, EvalReport>> rows;
    for (const std::string& run : args.runs) {
        fs::path path(run);
        std::string name;
        if (fs::is_directory(path)) {
            name = path.lexically_normal().filename().string();
            if (name.empty()) name = path.lexically_normal().parent_path().filename().string();
            path /= "report.json";
        } else {
            name = path.filename() == "report.json" ? path.parent_path().filename().string() : path.stem().string();
        }
        rows.emplace_back(name, report_from_json(read_text(path)));
    }
    const std::string table = format_report_table(rows);
    if (!args.out.empty()) write_text(args.out, table);
    out << table;
    return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Conversational QA training with question-rewrite consistency", "excord"};
    app.require_subcommand(1);
    std::string log_level = "warn";
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")->capture_default_str();

    PrepareArgs prepare;
    auto* prepare_cmd = app.add_subcommand("prepare", "Load corpora, build question pairs, write a data directory");
    prepare_cmd->add_option("--quac", prepare.quac, "QuAC-style JSON file(s)");
    prepare_cmd->add_option("--canard", prepare.canard, "CANARD-style rewrite file(s)");
    prepare_cmd->add_option("--coqa", prepare.coqa, "CoQA-style JSON file(s)");
    prepare_cmd->add_option("--input-dir", prepare.input_dir, "Directory holding quac*.json, canard*.json, coqa*.json");
    prepare_cmd->add_option("--synthetic", prepare.synthetic, "Add N generated coreference dialogues")
        ->capture_default_str();
    prepare_cmd->add_option("--out", prepare.out, "Output data directory")->required();
    prepare_cmd->add_option("--dev-fraction", prepare.dev_fraction, "Hold out this share of dialogues as dev.jsonl")
        ->capture_default_str();
    prepare_cmd->add_option("--seed", prepare.seed, "Seed for splitting, generation and decoding")
        ->capture_default_str();
    prepare.rewriter.add(prepare_cmd);
    add_decoding_flags(prepare_cmd, prepare.decoding);

    RewriteArgs rewrite_args;
    auto* rewrite_cmd = app.add_subcommand("rewrite", "Rewrite questions into self-contained form");
    rewrite_cmd->add_option("--backend", rewrite_args.backend, "rules or learned")
        ->check(CLI::IsMember({"rules", "learned"}))
        ->capture_default_str();
    rewrite_args.rewriter.add(rewrite_cmd);
    rewrite_cmd->add_option("--data", rewrite_args.data, "Canonical dialogues JSONL to rewrite");
    rewrite_cmd->add_option("--out", rewrite_args.out, "Rewrite cache JSONL (appended)");
    rewrite_cmd->add_option("--question", rewrite_args.question, "Rewrite one question and print it");
    rewrite_cmd->add_option("--history", rewrite_args.history, "History texts for --question: q1 a1 q2 a2 ...");
    rewrite_cmd->add_option("--fit", rewrite_args.fit, "Fine-tune the learned backend on a CANARD-style file");
    rewrite_cmd->add_option("--fit-epochs", rewrite_args.fit_epochs, "Fine-tuning epochs")->capture_default_str();
    rewrite_cmd->add_option("--fit-lr", rewrite_args.fit_lr, "Fine-tuning learning rate")->capture_default_str();
    rewrite_cmd->add_option("--save-model", rewrite_args.save_model, "Where to save the fitted model");
    rewrite_cmd->add_option("--seed", rewrite_args.seed, "Decoding and fitting seed")->capture_default_str();
    add_decoding_flags(rewrite_cmd, rewrite_args.decoding);

    TrainArgs train_args;
    TrainConfig& d = train_args.defaults;
    auto* train_cmd = app.add_subcommand("train", "Train the QA backbone in one of the four modes");
    train_cmd->add_option("--config", train_args.config, "Run config JSON; flags override its values");
    train_cmd->add_option("--data", train_args.data, "Data directory written by prepare")->required();
    train_cmd->add_option("--run-dir", train_args.run_dir, "Output run directory")->required();
    train_cmd->add_option("--mode", train_args.mode, "end_to_end, pipeline, excord or question_augment")
        ->capture_default_str();
    train_cmd->add_option("--lr", d.learning_rate, "AdamW learning rate")->capture_default_str();
    train_cmd->add_option("--batch-size", d.batch_size, "Question pairs per step")->capture_default_str();
    train_cmd->add_option("--eval-interval", d.eval_interval_steps, "Steps between dev evaluations")
        ->capture_default_str();
    train_cmd->add_option("--max-steps", d.max_steps, "Step budget; 0 derives it from --epochs")->capture_default_str();
    train_cmd->add_option("--epochs", d.epochs, "Passes over the pairs when --max-steps is 0")->capture_default_str();
    train_cmd->add_option("--lambda1", d.weights.lambda1, "Weight of the self-contained question loss")
        ->capture_default_str();
    train_cmd->add_option("--lambda2", d.weights.lambda2, "Weight of the consistency loss")->capture_default_str();
    train_cmd->add_option("--temperature", d.weights.target_temperature, "Consistency target temperature")
        ->capture_default_str();
    train_cmd->add_option("--history-window", d.history_window_k, "Previous turns fed with the question")
        ->capture_default_str();
    train_cmd->add_option("--seed", d.seed, "Seed for initialization and shuffling")->capture_default_str();
    train_cmd->add_option("--weight-decay", d.weight_decay, "AdamW decoupled weight decay")->capture_default_str();
    train_cmd->add_option("--warmup-fraction", d.warmup_fraction, "Share of steps with linear warmup")
        ->capture_default_str();
    train_cmd->add_option("--max-seq-len", d.limits.max_sequence_len, "Maximum input length")->capture_default_str();
    train_cmd->add_option("--max-query-len", d.limits.max_query_len, "Maximum question+history length")
        ->capture_default_str();
    train_cmd->add_option("--doc-stride", d.limits.doc_stride, "Document window stride")->capture_default_str();
    train_cmd->add_option("--max-answer-len", d.max_answer_len, "Longest decoded answer in tokens")
        ->capture_default_str();
    train_cmd->add_flag("--hae", train_args.use_hae, "Enable the history answer embedding");

    PredictArgs predict_args;
    auto* predict_cmd = app.add_subcommand("predict", "Write a predictions file for a set of dialogues");
    predict_cmd->add_option("--run-dir", predict_args.run_dir, "Run directory with backbone.json and config.json");
    predict_cmd->add_option("--backbone", predict_args.backbone, "Backbone checkpoint JSON");
    predict_cmd->add_option("--config", predict_args.config, "Run config JSON");
    predict_cmd->add_option("--data", predict_args.data, "Canonical dialogues JSONL")->required();
    predict_cmd->add_option("--out", predict_args.out, "Predictions JSON (question id -> answer)")->required();
    predict_cmd->add_option("--mode", predict_args.mode, "Override the run's mode");
    predict_cmd->add_option("--rewrites", predict_args.rewrites, "Rewrite cache JSONL for pipeline mode");
    predict_args.rewriter.add(predict_cmd);
    predict_cmd->add_option("--seed", predict_args.seed, "Rewriter decoding seed")->capture_default_str();
    add_decoding_flags(predict_cmd, predict_args.decoding);

    EvaluateArgs evaluate_args;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "Score predictions: F1, HEQ-Q, HEQ-D");
    evaluate_cmd->add_option("--predictions", evaluate_args.predictions, "Predictions JSON")->required();
    evaluate_cmd->add_option("--gold", evaluate_args.gold, "Canonical dialogues JSONL");
    evaluate_cmd->add_option("--quac", evaluate_args.quac, "QuAC-style gold JSON");
    evaluate_cmd->add_option("--coqa", evaluate_args.coqa, "CoQA-style gold JSON");
    evaluate_cmd->add_option("--out", evaluate_args.out, "Report JSON");
    evaluate_cmd->add_option("--name", evaluate_args.name, "Row label in the table")->capture_default_str();
    evaluate_cmd->add_flag("--coqa-domains", evaluate_args.coqa_domains, "Add per-domain F1 for CoQA sources");

    ReportArgs report_args;
    auto* report_cmd = app.add_subcommand("report", "Compare evaluated runs in one table");
    report_cmd->add_option("runs", report_args.runs, "Run directories (with report.json) or report files")
        ->required();
    report_cmd->add_option("--out", report_args.out, "Also write the table here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    }

    const auto level = spdlog::level::from_str(log_level);
    spdlog::set_level(level);

    try {
        if (prepare_cmd->parsed()) return run_prepare(prepare, out);
        if (rewrite_cmd->parsed()) return run_rewrite(rewrite_args, out);
        if (train_cmd->parsed()) return run_train(train_args, *train_cmd, out);
        if (predict_cmd->parsed()) return run_predict(predict_args, out);
        if (evaluate_cmd->parsed()) return run_evaluate(evaluate_args, out);
        if (report_cmd->parsed()) return run_report(report_args, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const ArgumentError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const CapabilityError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const ParseError& e) {
        err << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const ValidationError& e) {
        err << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const RewriteError& e) {
        err << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitFailure;
}

}  // namespace excord::cli
