#include <assert.h>
#include <math.h>
#include <stdio.h>
#include "mftc.h"

int main(void) {
    double q[1] = {1.0};
    MftcQuadraticModel *model = NULL;
    assert(mftc_quadratic_model_new(1, q, NULL, NULL, NULL, NULL, NULL, 1.0, 0.5, &model) == MftcStatus_Ok);

    double pts[1] = {1.0};
    MftcEnsemble *x0 = NULL;
    assert(mftc_ensemble_new(pts, 1, 1, &x0) == MftcStatus_Ok);

    MftcSolution *sol = NULL;
    assert(mftc_solve(model, x0, 0.0, 400, 1e-10, 10000, false, &sol) == MftcStatus_Ok);
    double value = 0.0;
    assert(mftc_solution_value(sol, &value) == MftcStatus_Ok);
    assert(fabs(value - 0.5 * tanh(0.5)) <= 1e-6);

    MftcRiccati *tables = NULL;
    assert(mftc_riccati_solve(model, 400, 1.0, &tables) == MftcStatus_Ok);
    double p0 = 0.0;
    assert(mftc_riccati_coefficient(tables, MftcRiccatiMatrix_P, 0, &p0, 1) == MftcStatus_Ok);
    assert(fabs(p0 - tanh(0.5)) <= 1e-8);

    mftc_riccati_free(tables);
    mftc_solution_free(sol);
    mftc_ensemble_free(x0);
    mftc_quadratic_model_free(model);
    printf("c smoke ok: value=%.9f p0=%.9f\n", value, p0);
    return 0;
}
