"""StateRate adapter - predicts each frame's MCS and adapts online when the prober fires"""
import logging

from adapters.base import AdapterObservation
from nn.network import LstmState, PredictionNetwork
from phy.link import McsIndex
from sources.sync import Standardizer, featurize
from staterate.inference import VirtualLabeler, predict, virtual_labels
from staterate.prober import ProberConfig, ProberState, prober_step
from staterate.training import OnlineConfig, finetune_online, retrain_from_scratch

logger = logging.getLogger(__name__)


class StateRateAdapter:
    """
    Deployed StateRate loop.

    For frame n the adapter feeds the ACK channel and sensor state of frame
    n - 1 through the prediction network. With online learning enabled it
    also scores its previous choice against the evaluator's virtual label,
    feeds the prober, and on a trigger fine-tunes a copy of the network from
    the prober buffer. The copy goes live publish_latency frames later; until
    then predictions come from the current parameters.
    """

    def __init__(
        self,
        prediction: PredictionNetwork,
        evaluator: VirtualLabeler,
        standardizer: Standardizer,
        prober_config: ProberConfig = ProberConfig(),
        online_config: OnlineConfig = OnlineConfig(),
        online: bool = True,
        takeoff_position: tuple[float, float, float] | None = None,
        name: str | None = None,
    ):
        self.name = name or ("staterate" if online else "staterate_offline")
        self.live = prediction
        self.evaluator = evaluator
        self.standardizer = standardizer
        self.prober_config = prober_config
        self.online_config = online_config
        self.online = online
        self.takeoff_position = takeoff_position

        self.prober: ProberState | None = None
        self.pending: tuple[int, PredictionNetwork] | None = None
        self.published = 0
        self._lstm_state: LstmState | None = None
        self._last_choice: McsIndex | None = None

    def choose(self, obs: AdapterObservation) -> McsIndex:
        self._publish_if_due(obs.frame_index)
        if obs.channel is None or obs.flight is None:
            self._last_choice = 0
            return 0

        if self.online:
            self._observe(obs)

        csi, state = featurize((obs.channel, obs.flight), self.standardizer)
        distribution, self._lstm_state = predict(self.live, csi, state, self._lstm_state)
        self._last_choice = distribution.mcs
        return distribution.mcs

    def _observe(self, obs: AdapterObservation):
        if self.prober is None:
            self.prober = ProberState(self.takeoff_position or obs.flight.position, self.prober_config)

        emcs = int(virtual_labels(self.evaluator, [obs.channel], self.standardizer)[0].argmax())
        correct = self._last_choice == emcs
        _, trigger = prober_step(self.prober, obs.flight, correct, obs.channel)
        if trigger and self.pending is None:
            self._adapt(obs.frame_index)

    def _adapt(self, frame_index: int):
        buffer = list(self.prober.buffer)
        if self.online_config.mode == "retrain":
            network = retrain_from_scratch(
                buffer, self.evaluator, self.standardizer, self.live.config, self.online_config
            )
        else:
            network = finetune_online(self.live, self.evaluator, buffer, self.standardizer, self.online_config)
        self.pending = (frame_index + self.online_config.publish_latency, network)

    def _publish_if_due(self, frame_index: int):
        if self.pending is None or frame_index < self.pending[0]:
            return
        _, network = self.pending
        self.live = network
        self.pending = None
        self.published += 1
        if self.online_config.mode == "retrain":
            # a different LSTM makes the carried state meaningless
            self._lstm_state = None
        logger.info(f"StateRate: published adapted parameters at frame {frame_index} ({self.online_config.mode})")
