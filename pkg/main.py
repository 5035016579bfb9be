"""
命令列入口 - simulate / optimize / backtest / stability / policy-search / config-schema
用法: python main.py <command> --config run.yaml --out runs/demo --seed 7
"""

import argparse
import json
import logging
import sys
from typing import List, Optional

from backtest import HistoricalMeanForecaster, compute_metrics, run_backtest
from dynamic_policy import CellGrid, build_mdp, search_policy
from file_manager import FileManager, export_market_data, ingest_market_data, load_labels
from market_simulator import OracleForecaster, generate_params, simulate
from objectives import evaluate, make_objective
from optimizer import optimize, stability_sweep
from report_exporter import ReportExporter
from run_config import RunConfig, config_schema, load_run_config
from universe import build_partition, optimize_bottom_up_detailed
from visualizer import RunVisualizer

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"
COMMANDS = ('simulate', 'optimize', 'backtest', 'stability', 'policy-search')


def setup_logging(level: str = "INFO", log_file: Optional[str] = None):
    """設定根 logger：標準錯誤輸出 + 可選的檔案"""
    handlers = [logging.StreamHandler(sys.stderr)]
    if log_file:
        handlers.append(logging.FileHandler(log_file, encoding='utf-8'))
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=LOG_FORMAT,
                        handlers=handlers, force=True)


class Runner:
    """執行單一命令並寫出產物"""

    def __init__(self, config: RunConfig, files: FileManager, plot: bool = False):
        self.config = config
        self.files = files
        self.exporter = ReportExporter(files)
        self.visualizer = RunVisualizer(files) if plot else None

    def _load_market(self):
        source = self.config.input
        if not source.prices:
            raise ValueError("此命令需要 input.prices 指定價格檔")
        panel, factors = ingest_market_data(source.prices, source.price_column)
        if source.labels:
            self.config.partition.labels = load_labels(source.labels)
        return panel, factors

    def _simulate_world(self):
        """模擬 T + lookback 期，使樣本外恰好 T 期"""
        dgp = self.config.dgp
        periods = dgp.T + self.config.backtest.lookback
        params = generate_params(dgp.n, dgp.seed, T=periods, noise_amplitude=dgp.noise_amplitude,
                                 return_scale=dgp.return_scale)
        factors, panel = simulate(params, dgp.seed, burn_in=dgp.burn_in)
        self.files.write_json("params.json", params.to_dict())
        export_market_data(self.files.path("market.csv"), panel, factors)
        self.files.record("market.csv")
        if dgp.forecaster == "historical":
            forecaster = HistoricalMeanForecaster(self.config.objective.window)
        else:
            forecaster = OracleForecaster(params, factors, dgp.forecaster, dgp.oracle_draws, dgp.seed)
        return panel, factors, forecaster

    def _historical_forecaster(self):
        if self.config.objective.forecast == "historical":
            return HistoricalMeanForecaster(self.config.objective.window)
        return None

    def _backtest(self, panel, factors, forecaster):
        config = self.config
        result = run_backtest(panel, config.objective.to_spec(), config.optimizer, config.backtest,
                              factors=factors, partition_config=config.partition,
                              region_template=config.region, forecaster=forecaster)
        metrics = compute_metrics(result.curve, config.backtest.periods_per_year)
        self.exporter.export_backtest(result, metrics, config.backtest.periods_per_year)
        if self.visualizer is not None:
            self.visualizer.plot_equity(result.curve, result.benchmark, result.excess)
        logger.info("📊 年化報酬 %.2f%%, 年化波動 %.2f%%, IR %.2f, MDD %.2f%%",
                    100 * metrics.ann_return, 100 * metrics.ann_vol, metrics.ir, 100 * metrics.mdd)

    def simulate(self):
        panel, factors, forecaster = self._simulate_world()
        self._backtest(panel, factors, forecaster)

    def backtest(self):
        panel, factors = self._load_market()
        self._backtest(panel, factors, self._historical_forecaster())

    def optimize(self):
        """以整段（尾端視窗）資料做一次優化"""
        config = self.config
        panel, factors = self._load_market()
        spec = config.objective.to_spec()
        forecaster = self._historical_forecaster()
        if forecaster is not None:
            spec = spec.with_forecast(forecaster(panel, panel.T - 1))
        partition = build_partition(config.partition, factors, panel.T - 1, panel.assets)
        if partition is None:
            result = optimize(config.region.build(panel.n), make_objective(spec, panel), config.optimizer)
            weights = result.best_weights
        else:
            result = optimize_bottom_up_detailed(panel, partition, config.region, spec, config.optimizer,
                                                 show_progress=config.backtest.show_progress)
            weights = result.weights
        self.exporter.export_weights(panel.dates[-1], panel.assets, weights)
        self.exporter.export_optimization(result, evaluate(spec, panel, weights))

    def stability(self):
        config = self.config
        if config.input.prices:
            panel, factors = self._load_market()
            forecaster = self._historical_forecaster()
        else:
            panel, factors, forecaster = self._simulate_world()
        table = stability_sweep(panel, config.objective.to_spec(), config.optimizer,
                                config.stability.m_list, config.stability.benchmark_m,
                                backtest_config=config.backtest, factors=factors,
                                partition_config=config.partition, region_template=config.region,
                                forecaster=forecaster, show_progress=config.backtest.show_progress)
        self.exporter.export_stability(table)
        if self.visualizer is not None:
            self.visualizer.plot_stability(table)

    def policy_search(self):
        policy_config = self.config.policy
        mdp = build_mdp(policy_config)
        grid = CellGrid.over(mdp, policy_config.divisions)
        result = search_policy(mdp, grid, policy_config.parameter_box(mdp), self.config.optimizer,
                               rollouts=policy_config.rollouts, seed=policy_config.seed)
        self.exporter.export_policy(result, policy_config.mdp, policy_config.gamma)

    def run(self, command: str):
        getattr(self, command.replace('-', '_'))()
        self.exporter.write_manifest(command, self.config.config_hash(), self.config.seed,
                                     self.config.to_dict())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="portfolio-optimizer",
        description="叢集細化蒙地卡羅投資組合優化：模擬、優化、回測、穩定性測試與策略搜尋")
    subparsers = parser.add_subparsers(dest='command', required=True)
    for command in COMMANDS:
        sub = subparsers.add_parser(command)
        sub.add_argument('--config', help="YAML 或 JSON 設定檔（預設值見 config-schema）")
        sub.add_argument('--out', default=f"runs/{command}", help="輸出目錄")
        sub.add_argument('--seed', type=int, help="全域種子，覆寫設定檔內各段落種子")
        sub.add_argument('--progress', action='store_true', help="顯示進度條")
        sub.add_argument('--plot', action='store_true', help="輸出 PNG 圖表")
        sub.add_argument('--log-level', default="INFO")
    subparsers.add_parser('config-schema', help="列出所有設定鍵、預設值與說明")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == 'config-schema':
        print(json.dumps(config_schema(), indent=2, ensure_ascii=False))
        return 0

    setup_logging(args.log_level)
    try:
        files = FileManager(args.out)
    except OSError as e:
        logger.error("❌ 無法建立輸出目錄 %s: %s", args.out, e)
        return 2

    exporter = ReportExporter(files)
    try:
        config = load_run_config(args.config)
        config.apply_seed(args.seed)
        if args.progress:
            config.backtest.show_progress = True
        if config.log_file:
            setup_logging(args.log_level, files.path(config.log_file))
        Runner(config, files, plot=args.plot).run(args.command)
    except Exception as e:
        exporter.write_error(args.command, e)
        logger.error("❌ %s 失敗: %s: %s", args.command, type(e).__name__, e)
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
