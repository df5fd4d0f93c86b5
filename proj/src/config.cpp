#include "lrd/util/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace lrd {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::map<std::string, std::string> from_flat_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    if (!j.is_object()) throw ValueError("config: JSON config must be a flat object");
    std::map<std::string, std::string> kv;
    for (const auto& [key, val] : j.items()) {
        if (val.is_string())
            kv[key] = val.get<std::string>();
        else if (val.is_array()) {
            std::string joined;
            for (const auto& e : val) {
                if (!joined.empty()) joined += ",";
                joined += e.dump();
            }
            kv[key] = joined;
        } else
            kv[key] = val.dump();
    }
    return kv;
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ValueError("config: key '" + key + "' has non-numeric value '" + v + "'");
    }
}

std::int64_t to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long long i = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return i;
    } catch (const std::exception&) {
        throw ValueError("config: key '" + key + "' has non-integer value '" + v + "'");
    }
}

}  // namespace

std::map<std::string, std::string> parse_config_text(const std::string& text) {
    const std::string t = trim(text);
    if (!t.empty() && t[0] == '{') return from_flat_json(t);
    std::map<std::string, std::string> kv;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string s = trim(line);
        if (s.empty() || s[0] == '#') continue;
        const auto eq = s.find('=');
        if (eq == std::string::npos)
            throw ValueError("config: line " + std::to_string(lineno) + " is not key=value: '" + s + "'");
        const std::string key = trim(s.substr(0, eq));
        const std::string val = trim(s.substr(eq + 1));
        if (key.empty()) throw ValueError("config: empty key on line " + std::to_string(lineno));
        if (kv.count(key)) throw ValueError("config: duplicate key '" + key + "'");
        kv[key] = val;
    }
    return kv;
}

std::map<std::string, std::string> parse_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("config: cannot read '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str());
}

ModelConfig model_config_from_map(const std::map<std::string, std::string>& kv) {
    static const std::set<std::string> allowed = {
        "mode",     "input_size", "levels",  "sigmas",       "d_f",   "d_g",        "d_e",
        "proj_hidden", "mu",      "lambda_c", "lambda_d",    "margin", "delta",     "lr",
        "beta1",    "beta2",      "weight_decay", "batch_size", "epochs", "seed",
    };
    for (const auto& [k, v] : kv)
        if (!allowed.count(k)) throw ValueError("config: unknown key '" + k + "'");

    ModelConfig cfg;
    if (auto it = kv.find("mode"); it != kv.end()) {
        if (it->second == "full")
            cfg = ModelConfig::full();
        else if (it->second == "micro")
            cfg = ModelConfig::micro();
        else
            throw ValueError("config: mode must be 'full' or 'micro', got '" + it->second + "'");
    }
    auto geti = [&](const char* k, std::int64_t& slot) {
        if (auto it = kv.find(k); it != kv.end()) slot = to_int(k, it->second);
    };
    auto getd = [&](const char* k, double& slot) {
        if (auto it = kv.find(k); it != kv.end()) slot = to_double(k, it->second);
    };
    geti("input_size", cfg.input_size);
    geti("levels", cfg.levels);
    if (auto it = kv.find("sigmas"); it != kv.end()) {
        cfg.sigmas.clear();
        std::stringstream ss(it->second);
        std::string tok;
        while (std::getline(ss, tok, ','))
            if (!tok.empty()) cfg.sigmas.push_back(to_double("sigmas", tok));
    }
    geti("d_f", cfg.d_f);
    geti("d_g", cfg.d_g);
    geti("d_e", cfg.d_e);
    geti("proj_hidden", cfg.proj_hidden);
    getd("mu", cfg.mu);
    getd("lambda_c", cfg.loss.lambda_c);
    getd("lambda_d", cfg.loss.lambda_d);
    getd("margin", cfg.loss.margin_m);
    getd("delta", cfg.loss.delta);
    getd("lr", cfg.lr);
    getd("beta1", cfg.beta1);
    getd("beta2", cfg.beta2);
    getd("weight_decay", cfg.weight_decay);
    geti("batch_size", cfg.batch_size);
    geti("epochs", cfg.epochs);
    if (auto it = kv.find("seed"); it != kv.end())
        cfg.seed = static_cast<std::uint64_t>(to_int("seed", it->second));
    cfg.validate();
    return cfg;
}

std::string model_config_to_json(const ModelConfig& cfg) {
    nlohmann::json j;
    j["mode"] = cfg.mode == ModelMode::Full ? "full" : "micro";
    j["input_size"] = cfg.input_size;
    j["levels"] = cfg.levels;
    j["sigmas"] = cfg.sigmas;
    j["d_f"] = cfg.d_f;
    j["d_g"] = cfg.d_g;
    j["d_e"] = cfg.d_e;
    j["proj_hidden"] = cfg.proj_hidden;
    j["mu"] = cfg.mu;
    j["lambda_c"] = cfg.loss.lambda_c;
    j["lambda_d"] = cfg.loss.lambda_d;
    j["margin"] = cfg.loss.margin_m;
    j["delta"] = cfg.loss.delta;
    j["lr"] = cfg.lr;
    j["beta1"] = cfg.beta1;
    j["beta2"] = cfg.beta2;
    j["weight_decay"] = cfg.weight_decay;
    j["batch_size"] = cfg.batch_size;
    j["epochs"] = cfg.epochs;
    j["seed"] = cfg.seed;
    return j.dump();
}

ModelConfig model_config_from_json(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text);
    ModelConfig cfg;
    cfg.mode = j.at("mode").get<std::string>() == "full" ? ModelMode::Full : ModelMode::Micro;
    cfg.input_size = j.at("input_size").get<std::int64_t>();
    cfg.levels = j.at("levels").get<std::int64_t>();
    cfg.sigmas = j.at("sigmas").get<std::vector<double>>();
    cfg.d_f = j.at("d_f").get<std::int64_t>();
    cfg.d_g = j.at("d_g").get<std::int64_t>();
    cfg.d_e = j.at("d_e").get<std::int64_t>();
    cfg.proj_hidden = j.at("proj_hidden").get<std::int64_t>();
    cfg.mu = j.at("mu").get<double>();
    cfg.loss.lambda_c = j.at("lambda_c").get<double>();
    cfg.loss.lambda_d = j.at("lambda_d").get<double>();
    cfg.loss.margin_m = j.at("margin").get<double>();
    cfg.loss.delta = j.at("delta").get<double>();
    cfg.lr = j.at("lr").get<double>();
    cfg.beta1 = j.at("beta1").get<double>();
    cfg.beta2 = j.at("beta2").get<double>();
    cfg.weight_decay = j.at("weight_decay").get<double>();
    cfg.batch_size = j.at("batch_size").get<std::int64_t>();
    cfg.epochs = j.at("epochs").get<std::int64_t>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    cfg.validate();
    return cfg;
}

}  // namespace lrd
