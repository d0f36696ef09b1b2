#include "skillsel/graph.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "skillsel/util.hpp"

namespace skillsel::graph {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {
constexpr uint32_t kAdjMagic = 0x44414B53u;  // "SKAD" little-endian
constexpr uint32_t kAdjVersion = 1;
}  // namespace

std::vector<double> softmax_with_temperature(const std::vector<double>& xs, double temperature) {
    if (temperature <= 0.0) throw ValidationError("softmax temperature must be positive");
    if (xs.empty()) return {};
    double mx = *std::max_element(xs.begin(), xs.end());
    std::vector<double> out(xs.size());
    double denom = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        out[i] = std::exp((xs[i] - mx) / temperature);
        denom += out[i];
    }
    for (auto& v : out) v /= denom;
    return out;
}

namespace {

class UnionFind {
public:
    explicit UnionFind(size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), size_t{0}); }
    size_t find(size_t x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }
    void unite(size_t a, size_t b) {
        a = find(a);
        b = find(b);
        if (a != b) parent_[std::max(a, b)] = std::min(a, b);
    }

private:
    std::vector<size_t> parent_;
};

// Distinct raw names in first-seen order plus their annotation frequency.
std::pair<std::vector<std::string>, std::unordered_map<std::string, int64_t>> raw_name_census(
    const std::vector<skills::SkillAnnotation>& annotations) {
    std::vector<std::string> names;
    std::unordered_map<std::string, int64_t> freq;
    for (const auto& a : annotations) {
        if (!a.math_relevance) continue;
        for (const auto& s : a.skills) {
            auto [it, inserted] = freq.emplace(s, 0);
            if (inserted) names.push_back(s);
            ++it->second;
        }
    }
    return {std::move(names), std::move(freq)};
}

}  // namespace

AliasMap merge_skills(const std::vector<skills::SkillAnnotation>& annotations,
                      const emb::EmbeddingMatrix& name_embeddings, double threshold) {
    if (threshold <= 0.0 || threshold > 1.0) {
        throw ValidationError("merge threshold must be in (0, 1]");
    }
    auto [names, freq] = raw_name_census(annotations);

    std::unordered_map<std::string, size_t> row_of;
    for (size_t i = 0; i < name_embeddings.rows(); ++i) row_of[name_embeddings.id_manifest[i]] = i;
    for (const auto& n : names) {
        if (!row_of.count(n)) {
            throw ValidationError("no embedding for skill name \"" + n + "\"");
        }
    }

    UnionFind uf(names.size());
    for (size_t i = 0; i < names.size(); ++i) {
        auto ri = name_embeddings.row(row_of[names[i]]);
        for (size_t j = i + 1; j < names.size(); ++j) {
            double c = emb::cosine(ri, name_embeddings.row(row_of[names[j]]));
            if (c > threshold) uf.unite(i, j);
        }
    }

    // Canonical member per component: highest frequency, ties to the
    // lexicographically smallest name.
    std::unordered_map<size_t, size_t> best;  // component root -> index of canonical member
    for (size_t i = 0; i < names.size(); ++i) {
        size_t root = uf.find(i);
        auto it = best.find(root);
        if (it == best.end()) {
            best[root] = i;
            continue;
        }
        const std::string& cur = names[it->second];
        const std::string& cand = names[i];
        if (freq[cand] > freq[cur] || (freq[cand] == freq[cur] && cand < cur)) it->second = i;
    }

    AliasMap map;
    for (size_t i = 0; i < names.size(); ++i) map[names[i]] = names[best[uf.find(i)]];
    return map;
}

void save_alias_map(const AliasMap& map, const fs::path& path) {
    std::string body;
    for (const auto& [raw, canonical] : map) {
        ordered_json j;
        j["raw"] = raw;
        j["canonical"] = canonical;
        body += j.dump();
        body += '\n';
    }
    util::atomic_write_file(path, body);
}

AliasMap load_alias_map(const fs::path& path) {
    AliasMap map;
    for (const auto& line : util::read_lines(path)) {
        if (util::trim(line).empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("raw") || !j.contains("canonical")) {
            throw ValidationError("malformed alias map line in " + path.string());
        }
        map[j["raw"].get<std::string>()] = j["canonical"].get<std::string>();
    }
    return map;
}

namespace {

// Canonical skill -> sorted distinct reference rows, shared by build_graph
// and default_temperature.
std::map<std::string, std::vector<int64_t>> canonical_doc_rows(
    const std::vector<skills::SkillAnnotation>& annotations, const AliasMap& alias_map,
    const std::vector<std::string>* ref_manifest) {
    std::unordered_map<std::string, int64_t> row_of;
    if (ref_manifest) {
        for (size_t i = 0; i < ref_manifest->size(); ++i) row_of[(*ref_manifest)[i]] = static_cast<int64_t>(i);
    }
    std::map<std::string, std::vector<int64_t>> rows;
    int64_t synthetic_row = 0;
    for (const auto& a : annotations) {
        if (!a.math_relevance) {
            ++synthetic_row;
            continue;
        }
        int64_t row;
        if (ref_manifest) {
            auto it = row_of.find(a.doc_id);
            if (it == row_of.end()) {
                throw ValidationError("annotation doc_id \"" + a.doc_id +
                                      "\" is not in the reference manifest");
            }
            row = it->second;
        } else {
            row = synthetic_row;
        }
        ++synthetic_row;

        std::set<std::string> canon;
        for (const auto& s : a.skills) {
            auto it = alias_map.find(s);
            if (it == alias_map.end()) {
                throw ValidationError("skill \"" + s + "\" is missing from the alias map");
            }
            canon.insert(it->second);
        }
        for (const auto& c : canon) rows[c].push_back(row);
    }
    for (auto& [name, docs] : rows) {
        std::sort(docs.begin(), docs.end());
        docs.erase(std::unique(docs.begin(), docs.end()), docs.end());
    }
    return rows;
}

}  // namespace

double default_temperature(const std::vector<skills::SkillAnnotation>& annotations,
                           const AliasMap& alias_map) {
    auto rows = canonical_doc_rows(annotations, alias_map, nullptr);
    if (rows.empty()) return 1.0;
    std::vector<double> counts;
    counts.reserve(rows.size());
    for (const auto& [name, docs] : rows) counts.push_back(static_cast<double>(docs.size()));
    double mean = std::accumulate(counts.begin(), counts.end(), 0.0) / counts.size();
    double var = 0.0;
    for (double c : counts) var += (c - mean) * (c - mean);
    var /= counts.size();
    double sigma = std::sqrt(var);
    return sigma > 1e-12 ? sigma : 1.0;
}

SkillGraph build_graph(const std::vector<skills::SkillAnnotation>& annotations,
                       const AliasMap& alias_map, const std::vector<std::string>& ref_manifest,
                       double temperature) {
    if (annotations.empty()) throw ValidationError("cannot build a graph from an empty annotation set");
    if (temperature <= 0.0) throw ValidationError("graph temperature must be positive");

    auto rows = canonical_doc_rows(annotations, alias_map, &ref_manifest);
    if (rows.empty()) throw ValidationError("no math-relevant annotations to build a graph from");

    SkillGraph g;
    g.temperature = temperature;
    std::unordered_map<std::string, int> id_of;
    for (const auto& [name, docs] : rows) {  // std::map iterates names sorted
        SkillNode node;
        node.skill_id = static_cast<int>(g.nodes.size());
        node.canonical_name = name;
        node.cnt = static_cast<int64_t>(docs.size());
        node.ids = docs;
        id_of[name] = node.skill_id;
        g.nodes.push_back(std::move(node));
    }
    for (const auto& [raw, canonical] : alias_map) {
        auto it = id_of.find(canonical);
        if (it != id_of.end() && raw != canonical) g.nodes[it->second].aliases.push_back(raw);
    }
    for (auto& n : g.nodes) std::sort(n.aliases.begin(), n.aliases.end());

    // Edge counts over per-document canonical skill sets.
    std::map<std::pair<int, int>, int64_t> edge_counts;
    for (const auto& a : annotations) {
        if (!a.math_relevance) continue;
        std::set<std::string> canon;
        for (const auto& s : a.skills) canon.insert(alias_map.at(s));
        std::vector<int> ids;
        ids.reserve(canon.size());
        for (const auto& c : canon) ids.push_back(id_of.at(c));
        std::sort(ids.begin(), ids.end());
        for (size_t x = 0; x < ids.size(); ++x) {
            for (size_t y = x + 1; y < ids.size(); ++y) {
                ++edge_counts[{ids[x], ids[y]}];
            }
        }
    }
    for (const auto& [key, cnt] : edge_counts) {
        g.edges.push_back({key.first, key.second, cnt});
    }

    std::vector<double> node_counts;
    node_counts.reserve(g.nodes.size());
    for (const auto& n : g.nodes) node_counts.push_back(static_cast<double>(n.cnt));
    g.diag = softmax_with_temperature(node_counts, temperature);

    std::vector<double> ecounts;
    ecounts.reserve(g.edges.size());
    for (const auto& e : g.edges) ecounts.push_back(static_cast<double>(e.cnt));
    g.edge_weight = softmax_with_temperature(ecounts, temperature);

    g.neighbors.assign(g.nodes.size(), {});
    for (size_t e = 0; e < g.edges.size(); ++e) {
        g.neighbors[g.edges[e].i].emplace_back(g.edges[e].j, static_cast<int>(e));
        g.neighbors[g.edges[e].j].emplace_back(g.edges[e].i, static_cast<int>(e));
    }
    for (auto& nb : g.neighbors) std::sort(nb.begin(), nb.end());
    return g;
}

namespace {

std::string format_double(double v) {
    char buf[64];
    if (v == std::floor(v) && std::abs(v) < 1e15) {
        std::snprintf(buf, sizeof(buf), "%.1f", v);
    } else {
        std::snprintf(buf, sizeof(buf), "%.6g", v);
    }
    return buf;
}

// Greedy agglomerative modularity (merge the community pair with the largest
// gain while a positive gain exists) on the unweighted structure.
double greedy_modularity(const SkillGraph& g) {
    const size_t n = g.node_count();
    const double m = static_cast<double>(g.edge_count());
    if (m == 0.0) return 0.0;

    std::vector<double> a(n);            // degree share per community
    std::vector<double> intra(n, 0.0);   // intra-community edge fraction
    std::vector<bool> alive(n, true);
    std::vector<std::map<int, double>> between(n);  // community -> edge fraction

    for (size_t i = 0; i < n; ++i) {
        a[i] = static_cast<double>(g.neighbors[i].size()) / (2.0 * m);
    }
    for (const auto& e : g.edges) {
        between[e.i][e.j] += 1.0 / m;
        between[e.j][e.i] += 1.0 / m;
    }

    for (;;) {
        double best_gain = 0.0;
        int best_i = -1, best_j = -1;
        for (size_t i = 0; i < n; ++i) {
            if (!alive[i]) continue;
            for (const auto& [j, f] : between[i]) {
                if (static_cast<size_t>(j) <= i) continue;
                double gain = f - 2.0 * a[i] * a[j];
                if (gain > best_gain + 1e-15) {
                    best_gain = gain;
                    best_i = static_cast<int>(i);
                    best_j = j;
                }
            }
        }
        if (best_i < 0) break;

        // Merge best_j into best_i.
        intra[best_i] += intra[best_j] + between[best_i][best_j];
        a[best_i] += a[best_j];
        between[best_i].erase(best_j);
        between[best_j].erase(best_i);
        for (const auto& [k, f] : between[best_j]) {
            between[best_i][k] += f;
            between[k].erase(best_j);
            between[k][best_i] = between[best_i][k];
        }
        between[best_j].clear();
        alive[best_j] = false;
    }

    double q = 0.0;
    for (size_t i = 0; i < n; ++i) {
        if (alive[i]) q += intra[i] - a[i] * a[i];
    }
    return q;
}

}  // namespace

GraphStats graph_stats(const SkillGraph& g) {
    if (g.node_count() == 0) throw ValidationError("graph statistics require a non-empty graph");
    GraphStats s;
    s.nodes = g.node_count();
    s.edges = g.edge_count();
    const double n = static_cast<double>(s.nodes);
    s.density = s.nodes > 1 ? (2.0 * static_cast<double>(s.edges)) / (n * (n - 1.0)) : 0.0;

    std::vector<int64_t> degree(s.nodes);
    for (size_t i = 0; i < s.nodes; ++i) degree[i] = static_cast<int64_t>(g.neighbors[i].size());
    s.maximum_degree = *std::max_element(degree.begin(), degree.end());
    s.minimum_degree = *std::min_element(degree.begin(), degree.end());
    double mean_deg = std::accumulate(degree.begin(), degree.end(), 0.0) / n;
    s.average_degree = mean_deg;
    double var = 0.0;
    for (int64_t d : degree) var += (static_cast<double>(d) - mean_deg) * (static_cast<double>(d) - mean_deg);
    s.degree_stddev = std::sqrt(var / n);

    // Mean local clustering; degree < 2 contributes 0.
    std::vector<std::vector<int>> adj(s.nodes);
    for (size_t i = 0; i < s.nodes; ++i) {
        adj[i].reserve(g.neighbors[i].size());
        for (const auto& [other, eidx] : g.neighbors[i]) adj[i].push_back(other);
    }
    double cc_sum = 0.0;
    for (size_t i = 0; i < s.nodes; ++i) {
        int64_t d = degree[i];
        if (d < 2) continue;
        int64_t links = 0;
        const auto& nb = adj[i];
        for (size_t x = 0; x < nb.size(); ++x) {
            for (size_t y = x + 1; y < nb.size(); ++y) {
                if (std::binary_search(adj[nb[x]].begin(), adj[nb[x]].end(), nb[y])) ++links;
            }
        }
        cc_sum += (2.0 * static_cast<double>(links)) / (static_cast<double>(d) * (static_cast<double>(d) - 1.0));
    }
    s.clustering_coefficient = cc_sum / n;
    s.modularity = greedy_modularity(g);
    return s;
}

std::vector<std::pair<std::string, std::string>> GraphStats::rows() const {
    return {
        {"Number of nodes", std::to_string(nodes)},
        {"Number of edges", std::to_string(edges)},
        {"Density", format_double(density)},
        {"Clustering Coefficient", format_double(clustering_coefficient)},
        {"Modularity", format_double(modularity)},
        {"Average degree", format_double(average_degree)},
        {"Maximum degree", std::to_string(maximum_degree)},
        {"Minimum degree", std::to_string(minimum_degree)},
        {"Degree standard deviation", format_double(degree_stddev)},
    };
}

std::string GraphStats::to_json() const {
    ordered_json j;
    j["nodes"] = nodes;
    j["edges"] = edges;
    j["density"] = density;
    j["clustering_coefficient"] = clustering_coefficient;
    j["modularity"] = modularity;
    j["average_degree"] = average_degree;
    j["maximum_degree"] = maximum_degree;
    j["minimum_degree"] = minimum_degree;
    j["degree_stddev"] = degree_stddev;
    return j.dump(2);
}

namespace {

std::string nodes_jsonl(const SkillGraph& g) {
    std::string body;
    for (const auto& n : g.nodes) {
        ordered_json j;
        j["skill_id"] = n.skill_id;
        j["name"] = n.canonical_name;
        j["aliases"] = n.aliases;
        j["cnt"] = n.cnt;
        j["ids"] = n.ids;
        body += j.dump();
        body += '\n';
    }
    return body;
}

std::string edges_jsonl(const SkillGraph& g) {
    std::string body;
    for (const auto& e : g.edges) {
        ordered_json j;
        j["i"] = e.i;
        j["j"] = e.j;
        j["cnt"] = e.cnt;
        body += j.dump();
        body += '\n';
    }
    return body;
}

std::string adjacency_bytes(const SkillGraph& g) {
    std::string body;
    uint64_t nnz = g.node_count() + 2 * g.edge_count();
    body.reserve(24 + nnz * 12);
    util::put_u32(body, kAdjMagic);
    util::put_u32(body, kAdjVersion);
    util::put_u64(body, g.node_count());
    util::put_u64(body, nnz);
    for (size_t i = 0; i < g.node_count(); ++i) {
        // Row-major with ascending columns; the diagonal slots in between.
        size_t k = 0;
        const auto& nb = g.neighbors[i];
        while (k < nb.size() && nb[k].first < static_cast<int>(i)) {
            util::put_u32(body, static_cast<uint32_t>(i));
            util::put_u32(body, static_cast<uint32_t>(nb[k].first));
            util::put_f32(body, static_cast<float>(g.edge_weight[nb[k].second]));
            ++k;
        }
        util::put_u32(body, static_cast<uint32_t>(i));
        util::put_u32(body, static_cast<uint32_t>(i));
        util::put_f32(body, static_cast<float>(g.diag[i]));
        while (k < nb.size()) {
            util::put_u32(body, static_cast<uint32_t>(i));
            util::put_u32(body, static_cast<uint32_t>(nb[k].first));
            util::put_f32(body, static_cast<float>(g.edge_weight[nb[k].second]));
            ++k;
        }
    }
    return body;
}

std::string checksum_of(const std::string& nodes, const std::string& edges, const std::string& adj) {
    util::Fnv1a h;
    h.update(nodes);
    h.update(edges);
    h.update(adj);
    return h.hex();
}

}  // namespace

std::string bundle_checksum(const SkillGraph& g) {
    return checksum_of(nodes_jsonl(g), edges_jsonl(g), adjacency_bytes(g));
}

void save_graph(const SkillGraph& g, const fs::path& dir) {
    fs::create_directories(dir);
    std::string nodes = nodes_jsonl(g);
    std::string edges = edges_jsonl(g);
    std::string adj = adjacency_bytes(g);
    util::atomic_write_file(dir / "nodes.jsonl", nodes);
    util::atomic_write_file(dir / "edges.jsonl", edges);
    util::atomic_write_file(dir / "adjacency.bin", adj);
    ordered_json meta;
    meta["temperature"] = g.temperature;
    meta["version"] = 1;
    meta["checksum"] = checksum_of(nodes, edges, adj);
    util::atomic_write_file(dir / "meta.json", meta.dump(2) + "\n");
}

SkillGraph load_graph(const fs::path& dir) {
    std::string nodes_text = util::read_file(dir / "nodes.jsonl");
    std::string edges_text = util::read_file(dir / "edges.jsonl");
    std::string adj_text = util::read_file(dir / "adjacency.bin");
    json meta = json::parse(util::read_file(dir / "meta.json"), nullptr, false);
    if (meta.is_discarded() || !meta.contains("version") || !meta.contains("checksum") ||
        !meta.contains("temperature")) {
        throw FormatError("malformed graph meta.json in " + dir.string());
    }
    if (meta["version"].get<int>() != 1) {
        throw FormatError("unsupported graph bundle version in " + dir.string());
    }
    if (meta["checksum"].get<std::string>() != checksum_of(nodes_text, edges_text, adj_text)) {
        throw FormatError("graph bundle checksum mismatch in " + dir.string());
    }

    SkillGraph g;
    g.temperature = meta["temperature"].get<double>();

    std::istringstream nodes_in(nodes_text);
    std::string line;
    while (std::getline(nodes_in, line)) {
        if (util::trim(line).empty()) continue;
        json j = json::parse(line);
        SkillNode n;
        n.skill_id = j.at("skill_id").get<int>();
        n.canonical_name = j.at("name").get<std::string>();
        for (const auto& a : j.at("aliases")) n.aliases.push_back(a.get<std::string>());
        n.cnt = j.at("cnt").get<int64_t>();
        for (const auto& x : j.at("ids")) n.ids.push_back(x.get<int64_t>());
        if (n.skill_id != static_cast<int>(g.nodes.size())) {
            throw FormatError("non-dense skill_id sequence in " + (dir / "nodes.jsonl").string());
        }
        g.nodes.push_back(std::move(n));
    }
    std::istringstream edges_in(edges_text);
    while (std::getline(edges_in, line)) {
        if (util::trim(line).empty()) continue;
        json j = json::parse(line);
        SkillEdge e{j.at("i").get<int>(), j.at("j").get<int>(), j.at("cnt").get<int64_t>()};
        if (e.i >= e.j || e.j >= static_cast<int>(g.nodes.size()) || e.cnt < 1) {
            throw FormatError("invalid edge record in " + (dir / "edges.jsonl").string());
        }
        g.edges.push_back(e);
    }

    size_t off = 0;
    if (util::get_u32(adj_text, off) != kAdjMagic) {
        throw FormatError("bad magic in adjacency file: " + (dir / "adjacency.bin").string());
    }
    if (uint32_t ver = util::get_u32(adj_text, off); ver != kAdjVersion) {
        throw FormatError("unsupported adjacency version " + std::to_string(ver));
    }
    uint64_t node_count = util::get_u64(adj_text, off);
    uint64_t nnz = util::get_u64(adj_text, off);
    if (node_count != g.node_count() || nnz != g.node_count() + 2 * g.edge_count()) {
        throw FormatError("adjacency shape disagrees with node/edge files in " + dir.string());
    }

    std::map<std::pair<int, int>, int> edge_index;
    for (size_t e = 0; e < g.edges.size(); ++e) edge_index[{g.edges[e].i, g.edges[e].j}] = static_cast<int>(e);
    g.diag.assign(g.node_count(), 0.0);
    g.edge_weight.assign(g.edge_count(), 0.0);
    std::vector<int> slot_seen(g.edge_count(), 0);
    std::vector<bool> diag_seen(g.node_count(), false);
    for (uint64_t t = 0; t < nnz; ++t) {
        uint32_t r = util::get_u32(adj_text, off);
        uint32_t c = util::get_u32(adj_text, off);
        float v = util::get_f32(adj_text, off);
        if (r >= node_count || c >= node_count) throw FormatError("adjacency index out of range");
        if (r == c) {
            g.diag[r] = v;
            diag_seen[r] = true;
            continue;
        }
        auto it = edge_index.find({std::min<int>(r, c), std::max<int>(r, c)});
        if (it == edge_index.end()) throw FormatError("adjacency entry without a matching edge");
        if (slot_seen[it->second] > 0 &&
            std::bit_cast<uint32_t>(static_cast<float>(g.edge_weight[it->second])) != std::bit_cast<uint32_t>(v)) {
            throw FormatError("asymmetric adjacency entries for edge " + std::to_string(it->second));
        }
        g.edge_weight[it->second] = v;
        ++slot_seen[it->second];
    }
    for (bool seen : diag_seen) {
        if (!seen) throw FormatError("adjacency is missing a diagonal entry");
    }
    for (int seen : slot_seen) {
        if (seen != 2) throw FormatError("adjacency is missing a symmetric edge entry");
    }

    g.neighbors.assign(g.node_count(), {});
    for (size_t e = 0; e < g.edges.size(); ++e) {
        g.neighbors[g.edges[e].i].emplace_back(g.edges[e].j, static_cast<int>(e));
        g.neighbors[g.edges[e].j].emplace_back(g.edges[e].i, static_cast<int>(e));
    }
    for (auto& nb : g.neighbors) std::sort(nb.begin(), nb.end());
    return g;
}

}  // namespace skillsel::graph
