"""
Country bias of two recommenders
================================

Two recommenders over the same catalog recommend different country mixes.
Observed fractions are compared with the catalog's and the summed
chi-squared statistic is tested for significance.
"""

from kgrecbias.bias import CategoricalFeature, bias_report, chi_square_cdf, chi_square_ppf
from kgrecbias.reports import bias_table

countries = {1: {"USA"}, 2: {"USA"}, 3: {"USA", "UK"}, 4: {"UK"}, 5: {"France"}, 6: {"Germany"},
             7: {"USA"}, 8: {"France"}}
feature = CategoricalFeature("country", ("USA", "UK", "France", "Germany"),
                             {i: frozenset(c) for i, c in countries.items()})

recs = {
    "en": {u: [1, 2, 7] for u in range(40)},
    "fr": {u: [5, 8, 3] for u in range(40)},
}
report = bias_report(recs, feature, catalog=countries)
print(bias_table(report).render_text(mark="row", columns=[0, 1]))
print(f"chi2 = {report.chi2_sum:.1f}, df = {report.df}, p = {report.p_value:.3g}, significant: {report.significant}")

# the 5% critical value used in the verdict
crit = chi_square_ppf(0.95, report.df)
print(f"critical value {crit:.3f}, cdf there {chi_square_cdf(crit, report.df):.6f}")
