#include "dlb/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "dlb/errors.hpp"

namespace dlb {

using nlohmann::json;

namespace {

// Walks one JSON object, remembering which keys were consumed so leftovers can be rejected.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string prefix, const std::string& source)
        : j_(j), prefix_(std::move(prefix)), source_(source) {
        if (!j_.is_object()) fail("", "expected an object");
    }

    std::string path(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

    [[noreturn]] void fail(const std::string& key, const std::string& reason) const {
        throw ParseError(source_, key.empty() ? (prefix_.empty() ? "<root>" : prefix_) : path(key), reason);
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    const json& raw(const std::string& key) {
        seen_.insert(key);
        return j_.at(key);
    }

    double number(const std::string& key, double fallback) {
        if (!has(key)) return fallback;
        const json& v = raw(key);
        if (!v.is_number()) fail(key, "expected a number");
        return v.get<double>();
    }

    std::int64_t integer(const std::string& key, std::int64_t fallback) {
        if (!has(key)) return fallback;
        const json& v = raw(key);
        if (!v.is_number_integer()) fail(key, "expected an integer");
        return v.get<std::int64_t>();
    }

    int int32(const std::string& key, int fallback) {
        const std::int64_t v = integer(key, fallback);
        if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) fail(key, "out of range");
        return static_cast<int>(v);
    }

    bool boolean(const std::string& key, bool fallback) {
        if (!has(key)) return fallback;
        const json& v = raw(key);
        if (!v.is_boolean()) fail(key, "expected true or false");
        return v.get<bool>();
    }

    std::string string(const std::string& key, const std::string& fallback) {
        if (!has(key)) return fallback;
        const json& v = raw(key);
        if (!v.is_string()) fail(key, "expected a string");
        return v.get<std::string>();
    }

    template <typename T>
    std::vector<T> array(const std::string& key, std::vector<T> fallback) {
        if (!has(key)) return fallback;
        const json& v = raw(key);
        if (!v.is_array()) fail(key, "expected an array");
        std::vector<T> out;
        for (const json& e : v) {
            if constexpr (std::is_integral_v<T>) {
                if (!e.is_number_integer()) fail(key, "expected integer entries");
                if constexpr (std::is_unsigned_v<T>) {
                    if (e.is_number_unsigned() || e.get<std::int64_t>() >= 0) {
                        out.push_back(e.get<T>());
                        continue;
                    }
                    fail(key, "expected non-negative entries");
                }
            } else {
                if (!e.is_number()) fail(key, "expected numeric entries");
            }
            out.push_back(e.get<T>());
        }
        return out;
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) fail(it.key(), "unknown key");
    }

private:
    const json& j_;
    std::string prefix_;
    const std::string& source_;
    std::set<std::string> seen_;
};

template <typename F>
void rethrow_as_parse_error(const std::string& source, const std::string& default_field, F&& f) {
    try {
        f();
    } catch (const InvalidArgument& e) {
        // Validation messages start with "field: reason".
        std::string msg = e.what();
        const auto colon = msg.find(':');
        if (colon != std::string::npos && msg.find(' ') > colon) {
            std::string field = msg.substr(0, colon);
            if (field.rfind("sweep.", 0) == 0) field = field.substr(6);
            throw ParseError(source, field, msg.substr(colon + 2));
        }
        throw ParseError(source, default_field, msg);
    }
}

}  // namespace

TargetSpec target_from_json(const json& j, const std::string& source) {
    ObjectReader r(j, "target", source);
    TargetSpec t;
    t.d = r.int32("d", 0);
    if (!r.has("d")) r.fail("d", "required");
    const std::string g = r.string("g", "monomial");
    GKind kind;
    try {
        kind = parse_g_kind(g);
    } catch (const InvalidArgument& e) {
        r.fail("g", e.what());
    }
    const std::vector<int> one_based = r.array<int>("indices", {});
    int k = r.int32("k", one_based.empty() ? 2 : static_cast<int>(one_based.size()));
    if (k < 1) r.fail("k", "must be >= 1");
    if (!one_based.empty() && static_cast<int>(one_based.size()) != k) r.fail("indices", "length differs from k");
    if (one_based.empty()) {
        t.indices = default_indices(k);
    } else {
        t.indices.clear();
        for (int i : one_based) t.indices.push_back(i - 1);
    }
    std::vector<double> params = r.array<double>("g_params", {});
    switch (kind) {
        case GKind::kMonomial: t.g = GFunction::monomial(k); break;
        case GKind::kSinLinear: {
            if (params.empty()) params = k == 2 ? std::vector<double>{2.0, 1.0} : std::vector<double>(k, 1.0);
            t.g = GFunction::sin_linear(params);
            break;
        }
        case GKind::kTanhSin: t.g = GFunction::tanh_sin(); break;
        case GKind::kCustom: r.fail("g", "custom g cannot be configured from JSON");
    }
    if (kind != GKind::kSinLinear && !params.empty()) r.fail("g_params", "only sin_linear takes parameters");
    try {
        t.scope = parse_scope(r.string("scope", "local"));
    } catch (const InvalidArgument& e) {
        r.fail("scope", e.what());
    }
    try {
        t.task = parse_task(r.string("task", "regression"));
    } catch (const InvalidArgument& e) {
        r.fail("task", e.what());
    }
    t.noise_eps = r.number("noise_eps", 0.0);
    r.finish();
    rethrow_as_parse_error(source, "target", [&] { validate(t); });
    return t;
}

json to_json(const TargetSpec& t) {
    json j;
    j["g"] = to_string(t.g.kind);
    if (t.g.kind == GKind::kSinLinear) j["g_params"] = t.g.parameters;
    j["scope"] = to_string(t.scope);
    j["d"] = t.d;
    j["k"] = t.k();
    std::vector<int> one_based;
    for (int i : t.indices) one_based.push_back(i + 1);
    j["indices"] = one_based;
    j["task"] = to_string(t.task);
    j["noise_eps"] = t.noise_eps;
    return j;
}

ExperimentConfig config_from_json(const json& j, const std::string& source) {
    ObjectReader r(j, "", source);
    ExperimentConfig c;
    SweepConfig& s = c.sweep;
    if (!r.has("target")) r.fail("target", "required");
    s.target = target_from_json(r.raw("target"), source);
    s.n_train = r.int32("n_train", s.n_train);
    s.n_test = r.int32("n_test", s.n_test);
    if (r.has("budget")) s.budget = r.integer("budget", 0);
    if (r.has("width")) s.width = r.int32("width", 0);
    s.depths = r.array<int>("depths", s.depths);
    if (r.has("lr_search")) {
        ObjectReader g(r.raw("lr_search"), "lr_search", source);
        s.lr_search.grid_lo = g.number("grid_lo", s.lr_search.grid_lo);
        s.lr_search.grid_hi = g.number("grid_hi", s.lr_search.grid_hi);
        s.lr_search.points_per_decade = g.int32("points_per_decade", s.lr_search.points_per_decade);
        s.lr_search.refine_rounds = g.int32("refine_rounds", s.lr_search.refine_rounds);
        g.finish();
    }
    s.folds = r.int32("folds", s.folds);
    s.batch_size = r.int32("batch_size", s.batch_size);
    s.epoch_cap = r.int32("epoch_cap", s.epoch_cap);
    s.cv_epoch_cap = r.int32("cv_epoch_cap", s.cv_epoch_cap);
    s.check_every = r.int32("check_every", s.check_every);
    s.loss_threshold = r.number("loss_threshold", s.loss_threshold);
    s.seeds = r.array<std::uint64_t>("seeds", s.seeds);
    try {
        s.init = parse_init_kind(r.string("init", to_string(s.init)));
    } catch (const InvalidArgument& e) {
        r.fail("init", e.what());
    }
    s.centered = r.boolean("centered", s.centered);
    s.beta = r.number("beta", s.beta);
    s.ntk_baseline = r.boolean("ntk_baseline", s.ntk_baseline);
    s.learning_rates = r.array<double>("learning_rates", s.learning_rates);
    s.workers = r.int32("workers", s.workers);
    const std::int64_t seed = r.integer("seed", 1);
    if (seed < 0) r.fail("seed", "must be >= 0");
    c.seed = static_cast<std::uint64_t>(seed);
    if (r.has("output_dir")) c.output_dir = r.string("output_dir", "");
    r.finish();
    rethrow_as_parse_error(source, "<root>", [&] { validate(s); });
    return c;
}

ExperimentConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw NotFound("config file '" + path + "' not found");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(path, "<root>", std::string("invalid JSON: ") + e.what());
    }
    return config_from_json(j, path);
}

json to_json(const ExperimentConfig& c) {
    const SweepConfig& s = c.sweep;
    json j;
    j["target"] = to_json(s.target);
    j["n_train"] = s.n_train;
    j["n_test"] = s.n_test;
    if (s.budget) j["budget"] = *s.budget;
    if (s.width) j["width"] = *s.width;
    j["depths"] = s.depths;
    j["lr_search"] = {{"grid_lo", s.lr_search.grid_lo},
                      {"grid_hi", s.lr_search.grid_hi},
                      {"points_per_decade", s.lr_search.points_per_decade},
                      {"refine_rounds", s.lr_search.refine_rounds}};
    j["folds"] = s.folds;
    j["batch_size"] = s.batch_size;
    j["epoch_cap"] = s.epoch_cap;
    j["cv_epoch_cap"] = s.cv_epoch_cap;
    j["check_every"] = s.check_every;
    j["loss_threshold"] = s.loss_threshold;
    j["seeds"] = s.seeds;
    j["init"] = to_string(s.init);
    j["centered"] = s.centered;
    j["beta"] = s.beta;
    j["ntk_baseline"] = s.ntk_baseline;
    j["learning_rates"] = s.learning_rates;
    j["workers"] = s.workers;
    j["seed"] = c.seed;
    if (c.output_dir) j["output_dir"] = *c.output_dir;
    return j;
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) { return to_json(a) == to_json(b); }

}  // namespace dlb
