use super::config::ExperimentKind;

/// A gnuplot script that plots `summary.csv` from its own directory.
pub fn gnuplot_script(kind: ExperimentKind) -> String {
    let mut s = String::from(
        "set datafile separator ','\nset key autotitle columnhead\nset terminal pngcairo size 900,600\nset output 'plot.png'\n",
    );
    let body = match kind {
        ExperimentKind::ApproxError => {
            "set logscale y\nset xlabel 'step'\nset ylabel 'mean absolute error'\n\
             plot 'summary.csv' using 'step':'mean_abs_tilde_mean' with lines title 'telescoped', \\\n     \
             'summary.csv' using 'step':'mean_abs_lin_mean' with lines title 'linearized'\n"
        }
        ExperimentKind::DoubleDescent => {
            "set logscale x\nset xlabel 'hidden width'\nset ylabel 'test error'\nset y2label 'effective parameters'\n\
             set ytics nomirror\nset y2tics\n\
             plot 'summary.csv' using 'width':'test_err_mean' with linespoints title 'test error', \\\n     \
             'summary.csv' using 'width':'p_train_mean' axes x1y2 with linespoints title 'p train', \\\n     \
             'summary.csv' using 'width':'p_test_mean' axes x1y2 with linespoints title 'p test'\n"
        }
        ExperimentKind::Grokking => {
            "set multiplot layout 2,1\nset logscale y\nset xlabel 'step'\n\
             plot 'summary.csv' using 'step':'train_mse_mean' with lines title 'train mse', \\\n     \
             'summary.csv' using 'step':'test_mse_mean' with lines title 'test mse'\n\
             unset logscale y\n\
             plot 'summary.csv' using 'step':'p_train_mean' with lines title 'p train', \\\n     \
             'summary.csv' using 'step':'p_test_mean' with lines title 'p test'\nunset multiplot\n"
        }
        ExperimentKind::GbtCompare => {
            "set multiplot layout 2,1\nset xlabel 'irregular share'\n\
             plot 'summary.csv' using 'p':'nn_ratio_mean' with linespoints title 'network', \\\n     \
             'summary.csv' using 'p':'gbt_ratio_mean' with linespoints title 'boosted trees'\n\
             plot 'summary.csv' using 'p':'rel_mse_mean' with linespoints title 'relative mse'\nunset multiplot\n"
        }
        ExperimentKind::Lmc => {
            "set multiplot layout 2,1\nset xlabel 'spawn step'\n\
             plot 'summary.csv' using 't_spawn':'barrier_mean' with linespoints title 'loss barrier'\n\
             plot 'summary.csv' using 't_spawn':'drift_output_mean' with linespoints title 'output layer drift'\nunset multiplot\n"
        }
    };
    s.push_str(body);
    s
}
