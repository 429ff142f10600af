#include "intermix/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace intermix {

double average_logical_latency(const EmissionLog &log) {
    const size_t u = log.emissions.size();
    if (u == 0) throw std::invalid_argument("no emissions");
    const double t_sec = log.duration_seconds();
    double sum = 0.0;
    for (size_t i = 0; i < u; ++i) {
        double diagonal = (i + 1) * t_sec / static_cast<double>(u);
        sum += log.emit_time_seconds(i) - diagonal;
    }
    return sum / static_cast<double>(u);
}

double average_lagging(const EmissionLog &log, ReferenceLengthMode mode, int reference_length) {
    const int u = static_cast<int>(log.emissions.size());
    if (u == 0) throw std::invalid_argument("no emissions");
    int u_star = u;
    if (mode == ReferenceLengthMode::Reference) {
        if (reference_length < 1) throw std::invalid_argument("bad reference length");
        u_star = reference_length;
    }
    const double t_sec = log.duration_seconds();
    const double gamma = u_star / t_sec;
    int tau = u;
    for (int i = 0; i < u; ++i) {
        if (log.emit_time_seconds(i) >= t_sec) {
            tau = i + 1;
            break;
        }
    }
    double sum = 0.0;
    for (int i = 0; i < tau; ++i) {
        sum += log.emit_time_seconds(i) - i / gamma;
    }
    return sum / tau;
}

double laal(const EmissionLog &log, int hyp_len, int ref_len) {
    return average_lagging(log, ReferenceLengthMode::Reference, std::max(hyp_len, ref_len));
}

double calls_per_output_token(const EmissionLog &log) {
    if (log.emissions.empty()) throw std::invalid_argument("no emissions");
    return static_cast<double>(log.model_calls) / static_cast<double>(log.emissions.size());
}

double policy_calls_per_output_token(const EmissionLog &log) {
    if (log.emissions.empty()) throw std::invalid_argument("no emissions");
    return static_cast<double>(log.policy_calls) / static_cast<double>(log.emissions.size());
}

int edit_distance(const std::vector<TokenId> &a, const std::vector<TokenId> &b) {
    const size_t n = a.size(), m = b.size();
    std::vector<int> prev(m + 1), cur(m + 1);
    for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
    for (size_t i = 1; i <= n; ++i) {
        cur[0] = static_cast<int>(i);
        for (size_t j = 1; j <= m; ++j) {
            int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

QualityReport quality_proxy(const std::vector<TokenId> &hyp, const std::vector<TokenId> &ref) {
    QualityReport q;
    q.exact_match_rate = (hyp == ref) ? 1.0 : 0.0;
    const size_t max_len = std::max(hyp.size(), ref.size());
    q.mean_similarity = max_len == 0 ? 1.0 : 1.0 - edit_distance(hyp, ref) / static_cast<double>(max_len);
    return q;
}

LatencyReport corpus_latency(const std::vector<EmissionLog> &logs,
                             const std::vector<int> &reference_lengths) {
    if (logs.empty()) throw std::invalid_argument("empty corpus");
    if (reference_lengths.size() != logs.size()) {
        throw std::invalid_argument("reference length per utterance required");
    }
    LatencyReport r;
    double lag_sum = 0.0;
    size_t token_count = 0;
    double al_sum = 0.0, laal_sum = 0.0;
    for (size_t i = 0; i < logs.size(); ++i) {
        const EmissionLog &log = logs[i];
        double all = average_logical_latency(log);
        r.per_utterance_all.push_back(all);
        lag_sum += all * log.emissions.size();
        token_count += log.emissions.size();
        double al = average_lagging(log);
        r.per_utterance_al.push_back(al);
        al_sum += al;
        double la = laal(log, static_cast<int>(log.emissions.size()), reference_lengths[i]);
        r.per_utterance_laal.push_back(la);
        laal_sum += la;
    }
    r.all_seconds = lag_sum / token_count;
    r.al_seconds = al_sum / logs.size();
    r.laal_seconds = laal_sum / logs.size();
    return r;
}

QualityReport corpus_quality(const std::vector<std::vector<TokenId>> &hyps,
                             const std::vector<std::vector<TokenId>> &refs) {
    if (hyps.size() != refs.size() || hyps.empty()) {
        throw std::invalid_argument("hypothesis/reference size mismatch");
    }
    QualityReport q;
    for (size_t i = 0; i < hyps.size(); ++i) {
        QualityReport one = quality_proxy(hyps[i], refs[i]);
        q.exact_match_rate += one.exact_match_rate;
        q.mean_similarity += one.mean_similarity;
    }
    q.exact_match_rate /= hyps.size();
    q.mean_similarity /= hyps.size();
    return q;
}

std::string report_csv_header() {
    return "policy,parameter,corpus,all_s,al_s,laal_s,calls_per_token,policy_calls_per_token,"
           "exact_match,similarity";
}

std::string report_csv_row(const ReportRow &row) {
    std::ostringstream out;
    out.precision(6);
    out << row.policy << ',' << row.parameter << ',' << row.corpus << ',' << row.all_s << ','
        << row.al_s << ',' << row.laal_s << ',' << row.calls_per_token << ','
        << row.policy_calls_per_token << ',' << row.exact_match << ',' << row.similarity;
    return out.str();
}

} // namespace intermix
