#include "mipl/cli.hpp"

#include <iostream>
#include <fstream>
#include <optional>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <CLI11.hpp>
#include "json.hpp"

#include "mipl/data.hpp"
#include "mipl/errors.hpp"
#include "mipl/evalsuite.hpp"
#include "mipl/gradcheck.hpp"
#include "mipl/losses.hpp"
#include "mipl/model.hpp"
#include "mipl/trainer.hpp"

namespace mipl::cli {

namespace {

using json = nlohmann::ordered_json;

void set_threads(int threads) {
#ifdef _OPENMP
    if (threads > 0) omp_set_num_threads(threads);
#else
    (void)threads;
#endif
}

losses::MarginVariant parse_margin(const std::string& s) {
    if (s == "off") return losses::MarginVariant::off;
    if (s == "mean") return losses::MarginVariant::mean;
    if (s == "distribution") return losses::MarginVariant::distribution;
    throw config_error("unknown margin variant: " + s);
}

trainer::Mode parse_mode(const std::string& s) {
    if (s == "mipl") return trainer::Mode::mipl;
    if (s == "mil") return trainer::Mode::mil;
    if (s == "pll") return trainer::Mode::pll;
    throw config_error("unknown mode: " + s);
}

struct GenerateArgs {
    data::GenConfig cfg;
    int r = -1;
    double q = -1.0;
    std::string degrade;
    std::string out;
};

int do_generate(GenerateArgs& a, bool has_r, bool has_q) {
    if (has_r) a.cfg.r = a.r;
    if (has_q) a.cfg.q = a.q;
    data::Dataset ds = data::generate(a.cfg);
    if (!a.degrade.empty()) {
        if (a.degrade == "mean")
            ds = data::degrade_dataset(ds, data::Degrade::mean);
        else if (a.degrade == "maxmin")
            ds = data::degrade_dataset(ds, data::Degrade::maxmin);
        else
            throw config_error("unknown degrade kind: " + a.degrade);
    }
    data::write_jsonl(ds, a.out);
    std::cout << "wrote " << ds.size() << " bags (d=" << ds.meta.d
              << ", k=" << ds.meta.k << ") to " << a.out << "\n";
    return 0;
}

struct TrainArgs {
    trainer::TrainConfig cfg;
    std::string data_path, test_path, out, report, weights_out;
    std::string mode = "mipl", margin = "distribution";
    std::vector<int> hidden;
    bool hidden_given = false;
    int threads = 0;
};

void write_report_jsonl(const std::vector<trainer::EpochRecord>& report,
                        const std::string& path) {
    std::ofstream out(path);
    if (!out) throw config_error("cannot open for writing: " + path);
    for (const auto& rec : report) {
        json line;
        line["epoch"] = rec.epoch;
        line["tau"] = rec.tau;
        line["lr"] = rec.lr;
        line["loss_d"] = rec.loss_d;
        line["loss_m"] = rec.loss_m;
        line["loss"] = rec.loss;
        if (rec.test_acc) line["test_acc"] = *rec.test_acc;
        out << line.dump() << "\n";
    }
    if (!out) throw config_error("short write to " + path);
}

int do_train(TrainArgs& a) {
    set_threads(a.threads);
    a.cfg.mode = parse_mode(a.mode);
    a.cfg.margin = parse_margin(a.margin);
    a.cfg.model.hidden =
        a.hidden_given ? a.hidden : std::vector<int>{a.cfg.model.embed_dim};

    data::Dataset train_ds = data::read_jsonl(a.data_path);
    if (a.cfg.mode == trainer::Mode::mil) train_ds = trainer::mil_adapt(train_ds);
    std::optional<data::Dataset> test_ds;
    if (!a.test_path.empty()) test_ds = data::read_jsonl(a.test_path);

    trainer::TrainResult res = trainer::train(
        a.cfg, train_ds, test_ds ? &*test_ds : nullptr, nullptr);

    model::save_checkpoint(res.params, res.schedule, a.out);
    if (!a.report.empty()) write_report_jsonl(res.report, a.report);
    if (!a.weights_out.empty())
        losses::write_weights_jsonl(train_ds, res.weights, a.weights_out);

    const auto& last = res.report.back();
    std::cout << "trained " << a.cfg.epochs << " epochs: loss=" << last.loss
              << " loss_d=" << last.loss_d << " loss_m=" << last.loss_m
              << " tau=" << last.tau;
    if (last.test_acc) std::cout << " test_acc=" << *last.test_acc;
    std::cout << "\ncheckpoint: " << a.out << "\n";
    return 0;
}

struct EvalArgs {
    std::string ckpt, data_path, out;
    int threads = 0;
};

int do_eval(EvalArgs& a) {
    set_threads(a.threads);
    model::Checkpoint ck = model::load_checkpoint(a.ckpt);
    data::Dataset ds = data::read_jsonl(a.data_path);
    evalsuite::EvalReport rep =
        evalsuite::evaluate(ck.params, ds, ck.schedule.current);
    json j;
    j["accuracy"] = rep.accuracy;
    j["n"] = rep.n;
    j["per_class"] = rep.per_class;
    json mj;
    mj["mean_phi"] = rep.margin.mean_phi;
    mj["std_phi"] = rep.margin.std_phi;
    mj["violation_rate"] = rep.margin.violation_rate;
    mj["n_margin_bags"] = rep.margin.n_margin_bags;
    j["margin"] = std::move(mj);
    if (!a.out.empty()) {
        std::ofstream out(a.out);
        if (!out) throw config_error("cannot open for writing: " + a.out);
        out << j.dump(2) << "\n";
    }
    std::cout << "accuracy=" << rep.accuracy << " n=" << rep.n
              << " violation_rate=" << rep.margin.violation_rate << "\n";
    return 0;
}

struct InspectArgs {
    std::string ckpt, data_path, out;
    int threads = 0;
};

int do_inspect(InspectArgs& a) {
    set_threads(a.threads);
    model::Checkpoint ck = model::load_checkpoint(a.ckpt);
    data::Dataset ds = data::read_jsonl(a.data_path);
    evalsuite::dump_attention(ck.params, ds, ck.schedule.current, a.out);
    std::cout << "wrote attention scores for " << ds.size() << " bags to "
              << a.out << "\n";
    return 0;
}

struct GradcheckArgs {
    std::uint64_t seed = 3;
    double h = 1e-5;
    double tol = 1e-4;
};

// Small full-pipeline problem: three bags, full loss with the distribution
// margin, every parameter coordinate checked by central differences.
int do_gradcheck(GradcheckArgs& a) {
    data::GenConfig gen;
    gen.m = 3;
    gen.k = 3;
    gen.d = 4;
    gen.n_min = 2;
    gen.n_max = 3;
    gen.r = 1;
    gen.seed = a.seed;
    gen.name = "gradcheck-toy";
    const data::Dataset ds = data::generate(gen);

    model::ModelConfig mc;
    mc.embed_dim = 5;
    mc.attn_dim = 4;
    mc.hidden = {5};
    rng::Engine eng(rng::mix(a.seed, 0x67636bULL));
    model::ModelParams shapes = model::ModelParams::init(mc, gen.d, gen.k, eng);
    const losses::DisambiguationWeights weights =
        losses::DisambiguationWeights::init(ds);

    losses::LossConfig lc;
    lc.lambda = 1.0;
    lc.variant = losses::MarginVariant::distribution;

    ad::ScalarBuilder builder = [&](ad::Tape& tape,
                                    const std::vector<ad::NodePtr>& flat) {
        model::ParamNodes nodes = model::bind_flat(tape, shapes, flat);
        std::vector<losses::BagTerm> batch;
        for (const data::Bag& bag : ds.bags) {
            model::Forward f = model::forward(tape, nodes, bag.instances, 1.0);
            batch.push_back({&bag, f.probs});
        }
        return losses::full_loss(tape, lc, batch, weights).total;
    };

    std::vector<Matrix> params;
    for (const Matrix* m : shapes.matrices()) params.push_back(*m);
    ad::GradcheckReport rep = ad::gradcheck(builder, params, a.h, a.tol);
    std::cout << rep.to_string() << "\n";
    return rep.ok() ? 0 : 2;
}

struct SweepArgs {
    trainer::TrainConfig cfg;
    std::string data_path, out;
    std::string param;
    std::vector<double> values;
    std::vector<std::uint64_t> seeds;
    double ratio = 0.7;
    int jobs = 1;
    std::string mode = "mipl", margin = "distribution";
    std::vector<int> hidden;
    bool hidden_given = false;
    int threads = 0;
};

int do_sweep(SweepArgs& a) {
    set_threads(a.threads);
    a.cfg.mode = parse_mode(a.mode);
    a.cfg.margin = parse_margin(a.margin);
    a.cfg.model.hidden =
        a.hidden_given ? a.hidden : std::vector<int>{a.cfg.model.embed_dim};
    trainer::SweepParam param;
    if (a.param == "lambda")
        param = trainer::SweepParam::lambda;
    else if (a.param == "tau0")
        param = trainer::SweepParam::tau0;
    else
        throw config_error("sweep: --param must be lambda or tau0");

    const data::Dataset full = data::read_jsonl(a.data_path);
    const std::vector<trainer::SweepRow> rows = trainer::sweep(
        a.cfg, param, a.values, a.seeds, full, a.ratio, a.jobs);

    std::ostream* os = &std::cout;
    std::ofstream file;
    if (!a.out.empty()) {
        file.open(a.out);
        if (!file) throw config_error("cannot open for writing: " + a.out);
        os = &file;
    }
    for (const auto& row : rows) {
        json j;
        j["param"] = a.param;
        j["value"] = row.value;
        j["mean_acc"] = row.mean_acc;
        j["std_acc"] = row.std_acc;
        json cells = json::array();
        for (const auto& cell : row.cells) {
            json cj;
            cj["seed"] = cell.seed;
            if (cell.accuracy)
                cj["accuracy"] = *cell.accuracy;
            else
                cj["error"] = cell.error;
            cells.push_back(std::move(cj));
        }
        j["cells"] = std::move(cells);
        (*os) << j.dump() << "\n";
    }
    if (!a.out.empty())
        std::cout << "wrote " << rows.size() << " sweep rows to " << a.out << "\n";
    return 0;
}

} // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"margin-aware multi-instance partial-label learning"};
    app.require_subcommand(1);

    GenerateArgs gen;
    CLI::App* cgen = app.add_subcommand(
        "generate", "synthesize a bag dataset and write it as JSONL");
    cgen->add_option("--m", gen.cfg.m, "number of bags")->capture_default_str();
    cgen->add_option("--k", gen.cfg.k, "number of classes")->capture_default_str();
    cgen->add_option("--d", gen.cfg.d, "feature width")->capture_default_str();
    cgen->add_option("--n-min", gen.cfg.n_min, "smallest bag size")->capture_default_str();
    cgen->add_option("--n-max", gen.cfg.n_max, "largest bag size")->capture_default_str();
    auto* opt_r = cgen->add_option(
        "--r", gen.r, "candidate noise: exactly r false positive labels per bag");
    auto* opt_q = cgen->add_option(
        "--q", gen.q, "candidate noise: flip probability per non-true label");
    opt_r->excludes(opt_q);
    opt_q->excludes(opt_r);
    cgen->add_option("--pos-min", gen.cfg.pos_min, "min positive-instance fraction")
        ->capture_default_str();
    cgen->add_option("--pos-max", gen.cfg.pos_max, "max positive-instance fraction")
        ->capture_default_str();
    cgen->add_option("--sep", gen.cfg.cluster_sep,
                     "cluster separation (centers sit sep*sqrt(d) apart)")
        ->capture_default_str();
    cgen->add_option("--seed", gen.cfg.seed, "generation seed")->capture_default_str();
    cgen->add_option("--name", gen.cfg.name, "dataset name")->capture_default_str();
    cgen->add_option("--degrade", gen.degrade,
                     "collapse bags to single instances: mean or maxmin");
    cgen->add_option("--out", gen.out, "output JSONL path")->required();

    TrainArgs tr;
    CLI::App* ctrain = app.add_subcommand("train", "train a model on a JSONL dataset");
    ctrain->add_option("--data", tr.data_path, "training dataset (JSONL)")->required();
    ctrain->add_option("--test", tr.test_path, "held-out dataset for accuracy reporting");
    ctrain->add_option("--epochs", tr.cfg.epochs, "training epochs")->capture_default_str();
    ctrain->add_option("--batch", tr.cfg.batch_size, "bags per optimizer step")
        ->capture_default_str();
    ctrain->add_option("--lr", tr.cfg.lr0, "initial learning rate (cosine-decayed)")
        ->capture_default_str();
    ctrain->add_option("--momentum", tr.cfg.momentum, "momentum coefficient")
        ->capture_default_str();
    ctrain->add_option("--wd", tr.cfg.weight_decay, "weight decay")->capture_default_str();
    ctrain->add_option("--lambda", tr.cfg.lambda, "margin loss weight")
        ->capture_default_str();
    ctrain->add_option("--margin", tr.margin, "margin variant: off, mean, distribution")
        ->capture_default_str();
    ctrain->add_option("--tau0", tr.cfg.tau0, "initial softmax temperature")
        ->capture_default_str();
    ctrain->add_option("--tau-min", tr.cfg.tau_min, "temperature floor")
        ->capture_default_str();
    ctrain->add_option("--mode", tr.mode, "task mode: mipl, mil, pll")
        ->capture_default_str();
    ctrain->add_option("--seed", tr.cfg.seed, "training seed")->capture_default_str();
    ctrain->add_option("--eval-every", tr.cfg.eval_every,
                       "evaluate on --test every N epochs (final epoch always)")
        ->capture_default_str();
    ctrain->add_option("--embed", tr.cfg.model.embed_dim, "embedding width")
        ->capture_default_str();
    ctrain->add_option("--attn", tr.cfg.model.attn_dim, "attention hidden width")
        ->capture_default_str();
    auto* opt_hidden = ctrain->add_option(
        "--hidden", tr.hidden, "extractor hidden widths (default: one layer of --embed)");
    ctrain->add_option("--threads", tr.threads, "OpenMP thread cap (0 = default)")
        ->capture_default_str();
    ctrain->add_option("--out", tr.out, "checkpoint path (JSON)")->required();
    ctrain->add_option("--report", tr.report, "per-epoch report path (JSONL)");
    ctrain->add_option("--weights-out", tr.weights_out,
                       "final disambiguation weights path (JSONL)");

    EvalArgs ev;
    CLI::App* ceval = app.add_subcommand("eval", "score a dataset with a checkpoint");
    ceval->add_option("--ckpt", ev.ckpt, "checkpoint path")->required();
    ceval->add_option("--data", ev.data_path, "dataset to score (JSONL)")->required();
    ceval->add_option("--out", ev.out, "write the full report as JSON here");
    ceval->add_option("--threads", ev.threads, "OpenMP thread cap (0 = default)")
        ->capture_default_str();

    InspectArgs ins;
    CLI::App* cinspect = app.add_subcommand(
        "inspect", "dump per-bag attention scores for a checkpoint");
    cinspect->add_option("--ckpt", ins.ckpt, "checkpoint path")->required();
    cinspect->add_option("--data", ins.data_path, "dataset (JSONL)")->required();
    cinspect->add_option("--out", ins.out, "output JSONL path")->required();
    cinspect->add_option("--threads", ins.threads, "OpenMP thread cap (0 = default)")
        ->capture_default_str();

    GradcheckArgs gc;
    CLI::App* cgrad = app.add_subcommand(
        "gradcheck", "compare tape gradients against central differences");
    cgrad->add_option("--seed", gc.seed, "toy problem seed")->capture_default_str();
    cgrad->add_option("--fd-step", gc.h, "finite-difference step")->capture_default_str();
    cgrad->add_option("--tol", gc.tol, "relative-error tolerance")->capture_default_str();

    SweepArgs sw;
    CLI::App* csweep = app.add_subcommand(
        "sweep", "train/eval a hyperparameter grid with per-seed splits");
    csweep->add_option("--data", sw.data_path, "full dataset (JSONL), split per seed")
        ->required();
    csweep->add_option("--param", sw.param, "hyperparameter: lambda or tau0")->required();
    csweep->add_option("--values", sw.values, "comma-separated values")
        ->required()
        ->delimiter(',');
    csweep->add_option("--seeds", sw.seeds, "comma-separated seeds")
        ->required()
        ->delimiter(',');
    csweep->add_option("--ratio", sw.ratio, "train fraction per split")
        ->capture_default_str();
    csweep->add_option("--jobs", sw.jobs, "parallel cells")->capture_default_str();
    csweep->add_option("--epochs", sw.cfg.epochs, "training epochs")->capture_default_str();
    csweep->add_option("--batch", sw.cfg.batch_size, "bags per optimizer step")
        ->capture_default_str();
    csweep->add_option("--lr", sw.cfg.lr0, "initial learning rate")->capture_default_str();
    csweep->add_option("--lambda", sw.cfg.lambda, "margin weight (base value)")
        ->capture_default_str();
    csweep->add_option("--margin", sw.margin, "margin variant: off, mean, distribution")
        ->capture_default_str();
    csweep->add_option("--tau0", sw.cfg.tau0, "initial temperature (base value)")
        ->capture_default_str();
    csweep->add_option("--tau-min", sw.cfg.tau_min, "temperature floor")
        ->capture_default_str();
    csweep->add_option("--mode", sw.mode, "task mode: mipl, mil, pll")
        ->capture_default_str();
    csweep->add_option("--embed", sw.cfg.model.embed_dim, "embedding width")
        ->capture_default_str();
    csweep->add_option("--attn", sw.cfg.model.attn_dim, "attention hidden width")
        ->capture_default_str();
    auto* opt_hidden_sw = csweep->add_option(
        "--hidden", sw.hidden, "extractor hidden widths (default: one layer of --embed)");
    csweep->add_option("--threads", sw.threads, "OpenMP thread cap (0 = default)")
        ->capture_default_str();
    csweep->add_option("--out", sw.out, "write rows as JSONL here (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (cgen->parsed())
            return do_generate(gen, opt_r->count() > 0, opt_q->count() > 0);
        if (ctrain->parsed()) {
            tr.hidden_given = opt_hidden->count() > 0;
            return do_train(tr);
        }
        if (ceval->parsed()) return do_eval(ev);
        if (cinspect->parsed()) return do_inspect(ins);
        if (cgrad->parsed()) return do_gradcheck(gc);
        if (csweep->parsed()) {
            sw.hidden_given = opt_hidden_sw->count() > 0;
            return do_sweep(sw);
        }
    } catch (const numeric_error& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

int run(const std::vector<std::string>& args) {
    std::vector<std::string> full;
    full.reserve(args.size() + 1);
    full.push_back("mipl");
    full.insert(full.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    argv.reserve(full.size());
    for (const std::string& s : full) argv.push_back(s.c_str());
    return run(static_cast<int>(argv.size()), argv.data());
}

} // namespace mipl::cli
